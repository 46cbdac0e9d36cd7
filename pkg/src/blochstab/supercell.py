"""Supercell fiber machinery and the discrete nonlinear vector field.

A supercell of L^3 cells carries the frequencies xi = 2pi m - theta_k with
theta_k = 2pi k / L and |m|_inf <= M; per component these are the
contiguous integers j = L m - k of the scaled grid xi = (2pi/L) j.  All
supercell fields are stored fiber-major as (L^3, N) coefficient arrays of
the synthesis  psi(x) = sum c[k, m] exp(-i xi . x).

The nonlinear model evaluated here is the coupled field-ion system in the
frame rotating at the ground frequency, with every product projected back
onto the truncated frequency set and the Poisson solve dropping the cell
mean.  With that closure the exact Jacobian at the embedded ground state
is block diagonal over fibers and equals the assembled generator
A(theta_k) -- the zero fiber taken in the dropped-zero-mode convention --
which is what the finite-difference linearization oracle verifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.signal import fftconvolve

from .densities import IonDensity
from .errors import InvalidParameterError, NeutralityError
from .groundstate import GroundState
from .lattice import DualBasis, theta_grid_of
from .operators import assemble_blocks, assemble_T2


@dataclass(frozen=True)
class FiberGrid:
    """Frequency bookkeeping for an L^3 supercell over a truncated basis."""

    basis: DualBasis
    L: int

    def __post_init__(self):
        if self.L < 1:
            raise InvalidParameterError("supercell size must be >= 1")

    @property
    def n_cells(self) -> int:
        return self.L ** 3

    @cached_property
    def thetas(self) -> np.ndarray:
        return theta_grid_of(self.L)

    @cached_property
    def cells(self) -> np.ndarray:
        L = self.L
        r = np.arange(L)
        return np.array(np.meshgrid(r, r, r, indexing="ij")).reshape(3, -1).T.astype(float)

    @cached_property
    def xi(self) -> np.ndarray:
        """Frequencies 2pi m - theta_k, shape (L^3, N, 3)."""
        return (2.0 * np.pi * self.basis.points.astype(float))[None, :, :] \
            - self.thetas[:, None, :]

    @cached_property
    def xi2(self) -> np.ndarray:
        return np.sum(self.xi ** 2, axis=2)

    @cached_property
    def _jgrid(self) -> tuple:
        # integer labels j = L m - k per component, plus cube geometry
        L, M = self.L, self.basis.cutoff
        k = np.rint(self.thetas * L / (2.0 * np.pi)).astype(int)       # (L^3, 3)
        m = self.basis.points                                          # (N, 3)
        j = L * m[None, :, :] - k[:, None, :]                          # (L^3, N, 3)
        jmin = -(L * M + L - 1)
        side = L * (2 * M + 1)
        return j, jmin, side

    @cached_property
    def _embed_flat(self) -> np.ndarray:
        j, jmin, side = self._jgrid
        u = j - jmin
        return ((u[..., 0] * side + u[..., 1]) * side + u[..., 2]).reshape(-1)

    def to_cube(self, fiber_arr: np.ndarray) -> np.ndarray:
        _, _, side = self._jgrid
        cube = np.zeros(side ** 3, dtype=complex)
        cube[self._embed_flat] = fiber_arr.reshape(-1)
        return cube.reshape(side, side, side)

    def from_cube(self, cube: np.ndarray) -> np.ndarray:
        return cube.reshape(-1)[self._embed_flat].reshape(self.n_cells, self.basis.size)

    def product(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Coefficients of the pointwise product, projected back on the set."""
        _, jmin, side = self._jgrid
        full = fftconvolve(self.to_cube(a), self.to_cube(b), mode="full")
        lo = -jmin
        sl = slice(lo, lo + side)
        return self.from_cube(full[sl, sl, sl])

    def abs2(self, a: np.ndarray) -> np.ndarray:
        """Coefficients of |f|^2, projected back on the set."""
        _, jmin, side = self._jgrid
        ca = self.to_cube(a)
        full = fftconvolve(ca, np.conj(ca[::-1, ::-1, ::-1]), mode="full")
        lo = jmin + side - 1
        sl = slice(lo, lo + side)
        return self.from_cube(full[sl, sl, sl])

    @cached_property
    def zero_mode(self) -> tuple:
        """(fiber, mode) flat location of xi = 0."""
        k0 = 0
        m0 = self.basis.index_of((0, 0, 0))
        return k0, m0

    @cached_property
    def reality_partner(self) -> np.ndarray:
        """Flat index of the (-xi) partner of every (fiber, mode) slot, or -1
        when the partner falls outside the truncation."""
        L, M = self.L, self.basis.cutoff
        k = np.rint(self.thetas * L / (2.0 * np.pi)).astype(int)
        m = self.basis.points
        kk = k[:, None, :]
        mm = m[None, :, :]
        kp = (-kk) % L
        mp = -mm + (kk != 0)
        valid = np.all(np.abs(mp) <= M, axis=2)
        side = 2 * M + 1
        mflat = ((mp[..., 0] + M) * side + (mp[..., 1] + M)) * side + (mp[..., 2] + M)
        kflat = (kp[..., 0] * L + kp[..., 1]) * L + kp[..., 2]
        flat = kflat * self.basis.size + mflat
        flat[~valid] = -1
        return flat.reshape(-1)

    def symmetrize_real(self, a: np.ndarray) -> np.ndarray:
        """Project fiber coefficients onto the real-field subspace."""
        flat = a.reshape(-1).copy()
        partner = self.reality_partner
        ok = partner >= 0
        sym = np.zeros_like(flat)
        sym[ok] = 0.5 * (flat[ok] + np.conj(flat[partner[ok]]))
        return sym.reshape(a.shape)


# ---------------------------------------------------------------------------
# Nonlinear model


@dataclass(frozen=True)
class NonlinearState:
    """(psi, q, p) on the supercell; psi fiber-major, q and p per cell."""

    psi: np.ndarray  # (L^3, N) complex
    q: np.ndarray    # (L^3, 3)
    p: np.ndarray    # (L^3, 3)


def embed_ground_state(gs: GroundState, grid: FiberGrid) -> NonlinearState:
    psi = np.zeros((grid.n_cells, grid.basis.size), dtype=complex)
    psi[0] = gs.psi0.coeffs
    zeros = np.zeros((grid.n_cells, 3))
    return NonlinearState(psi=psi, q=zeros.copy(), p=zeros.copy())


def nonlinear_field(state: NonlinearState, grid: FiberGrid, d: IonDensity,
                    e: float, omega0: float, ion_mass: float) -> NonlinearState:
    """Right-hand side of the truncated field-ion system in the rotating frame.

        i psi_t = (-1/2 Lap - omega0) psi - e P(Phi psi)
        q_t     = p / M
        p_t(n)  = -<grad Phi, sigma(. - n - q_n)>

    with Phi the zero-mean spectral Poisson solve of the projected charge
    sigma-part minus e |psi|^2.
    """
    L3, N = grid.n_cells, grid.basis.size
    xi = grid.xi.reshape(-1, 3)
    xi2 = grid.xi2.reshape(-1)
    sig = d(xi)

    # charge: displaced-ion part sampled per frequency, electron part by correlation
    site = grid.cells + state.q                     # (L^3, 3), ion positions
    phase = np.exp(1j * (xi @ site.T))              # (frequencies, cells)
    rho_sigma = sig * np.sum(phase, axis=1) / L3
    rho = rho_sigma - e * grid.abs2(state.psi).reshape(-1)

    phi = np.zeros_like(rho)
    nz = xi2 > 0
    phi[nz] = rho[nz] / xi2[nz]

    conv = grid.product(phi.reshape(L3, N), state.psi).reshape(-1)
    dpsi = -1j * ((0.5 * xi2 - omega0) * state.psi.reshape(-1) - e * conv)

    dq = state.p / ion_mass

    # force: sum_xi i xi Phi(xi) exp(-i xi.(n + q_n)) conj(sigma_hat)
    back = np.exp(-1j * (xi @ (grid.cells + np.conj(state.q)).T))
    weights = 1j * phi * np.conj(sig)
    dp = np.einsum("f,fc,fi->ci", weights, back, xi)

    return NonlinearState(psi=dpsi.reshape(L3, N), q=dq, p=dp)


# ---------------------------------------------------------------------------
# Block-diagonal assembled generator


def supercell_generators(gs: GroundState, d: IonDensity, grid: FiberGrid,
                         ion_mass: float = 1.0) -> list:
    """A(theta_k) per fiber; the dual-lattice fiber k = 0 is assembled in the
    dropped-zero-mode convention to match the supercell Poisson solve."""
    T2 = assemble_T2(gs, d)
    mats = []
    for k in range(grid.n_cells):
        theta = grid.thetas[k]
        gamma = bool(np.allclose(theta, 0.0))
        blocks = assemble_blocks(theta, gs, d, ion_mass=ion_mass,
                                 allow_gamma=gamma, drop_zero=gamma, T2_cached=T2)
        mats.append(blocks.A)
    return mats


def _dft_cells_arr(arr: np.ndarray, L: int, inverse: bool) -> np.ndarray:
    shaped = arr.reshape(L, L, L, -1)
    out = np.fft.ifftn(shaped, axes=(0, 1, 2)) if inverse \
        else np.fft.fftn(shaped, axes=(0, 1, 2))
    return out.reshape(arr.shape)


def apply_generators(mats: list, grid: FiberGrid, psi1, psi2, q, p):
    """Apply the block-diagonal generator to fiber fields and per-cell ion
    data; returns rates in the same layout."""
    L, N = grid.L, grid.basis.size
    qh = _dft_cells_arr(q.astype(complex), L, inverse=False)
    ph = _dft_cells_arr(p.astype(complex), L, inverse=False)
    r1 = np.empty_like(psi1)
    r2 = np.empty_like(psi2)
    rq = np.empty_like(qh)
    rp = np.empty_like(ph)
    for k in range(grid.n_cells):
        y = np.concatenate([psi1[k], psi2[k], qh[k], ph[k]])
        rate = mats[k] @ y
        r1[k] = rate[:N]
        r2[k] = rate[N:2 * N]
        rq[k] = rate[2 * N:2 * N + 3]
        rp[k] = rate[2 * N + 3:]
    return r1, r2, _dft_cells_arr(rq, L, inverse=True), _dft_cells_arr(rp, L, inverse=True)


# ---------------------------------------------------------------------------
# Linearization oracle


@dataclass(frozen=True)
class OracleDirection:
    psi1: np.ndarray  # (L^3, N) fiber coefficients of a real field
    psi2: np.ndarray
    q: np.ndarray     # (L^3, 3) real
    p: np.ndarray


def random_real_direction(grid: FiberGrid, gs: GroundState, rng,
                          psi_only: str | None = None) -> OracleDirection:
    """Random direction with real fields and a neutral linearized charge."""
    L3, N = grid.n_cells, grid.basis.size

    def rand_field():
        raw = rng.standard_normal((L3, N)) + 1j * rng.standard_normal((L3, N))
        return grid.symmetrize_real(raw)

    psi1 = rand_field()
    psi2 = rand_field()
    q = rng.standard_normal((L3, 3))
    p = rng.standard_normal((L3, 3))
    if psi_only == "psi2":
        psi1 = np.zeros_like(psi1)
        q = np.zeros_like(q)
        p = np.zeros_like(p)
    # linear-order mass neutrality: <psi0, Psi1> = 0
    psi0 = gs.psi0.coeffs
    overlap = np.sum(psi0 * np.conj(psi1[0]))
    psi1 = psi1.copy()
    psi1[0] -= (np.conj(overlap) / np.sum(np.abs(psi0) ** 2)) * psi0
    norm = np.sqrt(np.sum(np.abs(psi1) ** 2) + np.sum(np.abs(psi2) ** 2)
                   + np.sum(q ** 2) + np.sum(p ** 2))
    return OracleDirection(psi1 / norm, psi2 / norm, q / norm, p / norm)


def direction_neutrality(grid: FiberGrid, gs: GroundState, v: OracleDirection) -> float:
    psi0 = gs.psi0.coeffs
    return float(abs(np.sum(psi0 * np.conj(v.psi1[0]))))


@dataclass(frozen=True)
class OracleReport:
    hs: tuple
    defects: tuple       # per direction: tuple of defects per h
    ratios: tuple        # per direction: defect(h) / defect(h/2) chain
    reference: tuple     # |A_sc V| per direction


def linearization_oracle(gs: GroundState, d: IonDensity, L: int,
                         hs=(1e-3, 5e-4), n_directions: int = 3,
                         ion_mass: float = 1.0, seed: int = 0,
                         directions=None, neutrality_tol: float = 1e-9) -> OracleReport:
    """Finite-difference Jacobian of the nonlinear supercell system against
    the block-diagonal Bloch assembly.

    For each real direction V the defect |(F(X0 + hV) - F(X0))/h - A V|
    is reported per step h; first-order convergence (ratios near 2 under
    h-halving) certifies that the assembled generator is the exact
    linearization.
    """
    grid = FiberGrid(basis=gs.basis, L=L)
    rng = np.random.default_rng(seed)
    if directions is None:
        directions = [random_real_direction(grid, gs, rng) for _ in range(n_directions)]
    for v in directions:
        if direction_neutrality(grid, gs, v) > neutrality_tol:
            raise NeutralityError(
                "direction perturbs the cell mass at linear order; the periodic "
                "Poisson solve requires neutral perturbations")

    mats = supercell_generators(gs, d, grid, ion_mass=ion_mass)
    x0 = embed_ground_state(gs, grid)
    f0 = nonlinear_field(x0, grid, d, gs.e, gs.omega0, ion_mass)
    L3 = grid.n_cells

    def state_norm(dpsi, dq, dp):
        return float(np.sqrt(L3 * np.sum(np.abs(dpsi) ** 2)
                             + np.sum(np.abs(dq) ** 2) + np.sum(np.abs(dp) ** 2)))

    defects, ratios, refs = [], [], []
    for v in directions:
        # The Bloch isometry carries field fibers as L^3 times the supercell
        # Fourier coefficient while ion fibers are plain DFTs; convert on the
        # way in and back out so the assembled fiber blocks see Y-variables.
        r1, r2, rq, rp = apply_generators(mats, grid, L3 * v.psi1, L3 * v.psi2,
                                          v.q.astype(complex), v.p.astype(complex))
        r1, r2 = r1 / L3, r2 / L3
        dpsi_pred = r1 + 1j * r2
        refs.append(state_norm(dpsi_pred, rq, rp))
        row = []
        for h in hs:
            xh = NonlinearState(psi=x0.psi + h * (v.psi1 + 1j * v.psi2),
                                q=x0.q + h * v.q, p=x0.p + h * v.p)
            fh = nonlinear_field(xh, grid, d, gs.e, gs.omega0, ion_mass)
            dpsi = (fh.psi - f0.psi) / h - dpsi_pred
            dq = (fh.q - f0.q) / h - rq
            dp = (fh.p - f0.p) / h - rp
            row.append(state_norm(dpsi, dq, dp))
        defects.append(tuple(row))
        ratios.append(tuple(row[i] / row[i + 1] for i in range(len(row) - 1)))
    return OracleReport(hs=tuple(hs), defects=tuple(defects),
                        ratios=tuple(ratios), reference=tuple(refs))
