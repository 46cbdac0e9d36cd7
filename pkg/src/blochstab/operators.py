"""Per-quasimomentum blocks of the linearized crystal dynamics.

For each theta off the dual lattice the linearization at the ground state
reduces to dense matrices on the truncated cube (fields ordered as
(Psi1, Psi2, Q, P)):

    Btheta = [[2 H0 + 4 f*f, 0,    2 S,     0    ],
              [0,            2 H0, 0,       0    ],
              [2 S*,         0,    T1 + T2, 0    ],
              [0,            0,    0,       1/M I]]

    Atheta = J Btheta,   J(Psi1, Psi2, Q, P) = (Psi2/2, -Psi1/2, P, -Q),

with H0 the shifted ground Hamiltonian, G the diagonal Green operator
1/|2pi m - theta|^2 and the factor matrices

    f = e sqrt(G) psi0,            (N x N, psi0 acting by convolution)
    g = sqrt(G) grad sigma_hat,    (N x 3, row m: -i xi sigma_hat(xi), xi = 2pi m - theta)

which satisfy the exact factorizations S = f* g, T1 = g* g and
e^2 psi0 G psi0 = f* f.  S and T1 are additionally assembled by their
direct formulas so the factorization identities are genuine checks, not
definitions.  T2 = <Phi0, grad grad sigma> is theta-independent and is
evaluated as a dual-lattice sum pairing the ground potential against the
density curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densities import IonDensity
from .errors import ExcludedThetaError, InvalidParameterError
from .groundstate import GroundState
from .lattice import BlochParameter, DualBasis, bloch_parameter


def _to_param(theta) -> BlochParameter:
    if isinstance(theta, BlochParameter):
        return theta
    return bloch_parameter(theta)


def _require_usable(bp: BlochParameter, allow_gamma: bool):
    if bp.excluded and not allow_gamma:
        raise ExcludedThetaError(
            f"theta = {bp.theta.tolist()} is within the exclusion ball around the dual lattice")


def green_diag_theta(basis: DualBasis, theta, drop_zero: bool = False) -> np.ndarray:
    """Diagonal of G(theta) = 1/|2pi m - theta|^2; with drop_zero the
    |xi| = 0 entry (present only on the dual lattice itself) is set to 0,
    matching a zero-mean Poisson solve."""
    xi = basis.freq(theta)
    r2 = np.sum(xi * xi, axis=1)
    g = np.zeros_like(r2)
    nz = r2 > 0
    g[nz] = 1.0 / r2[nz]
    if not drop_zero and not np.all(nz):
        raise ExcludedThetaError("G(theta) is singular on the dual lattice")
    return g


def assemble_H0(theta, gs: GroundState, basis: DualBasis | None = None,
                allow_gamma: bool = False) -> np.ndarray:
    """Hermitian matrix of -1/2 (grad + i theta)^2 - e Phi0 - omega0."""
    bp = _to_param(theta)
    _require_usable(bp, allow_gamma)
    basis = basis or gs.basis
    k2 = np.sum(basis.freq(bp.theta) ** 2, axis=1)
    H = -gs.e * basis.convolution_matrix(gs.phi0.coeffs)
    H[np.diag_indices_from(H)] += 0.5 * k2 - gs.omega0
    return H


def assemble_fg(theta, gs: GroundState, d: IonDensity,
                basis: DualBasis | None = None, allow_gamma: bool = False,
                drop_zero: bool = False):
    """Factor matrices (f, g) of the coupling blocks at theta."""
    bp = _to_param(theta)
    _require_usable(bp, allow_gamma)
    basis = basis or gs.basis
    gd = green_diag_theta(basis, bp.theta, drop_zero=drop_zero)
    sq = np.sqrt(gd)
    xi = basis.freq(bp.theta)
    f = gs.e * sq[:, None] * basis.convolution_matrix(gs.psi0.coeffs)
    g = sq[:, None] * (-1j) * xi * d(xi)[:, None]
    return f, g


def assemble_S_direct(theta, gs: GroundState, d: IonDensity,
                      basis: DualBasis | None = None, allow_gamma: bool = False,
                      drop_zero: bool = False) -> np.ndarray:
    """Coupling block S = e psi0 G(theta) grad sigma by its direct formula
    (independent of the f* g factorization)."""
    bp = _to_param(theta)
    _require_usable(bp, allow_gamma)
    basis = basis or gs.basis
    gd = green_diag_theta(basis, bp.theta, drop_zero=drop_zero)
    xi = basis.freq(bp.theta)
    grad_sigma = (-1j) * xi * d(xi)[:, None]
    return gs.e * basis.convolution_matrix(gs.psi0.coeffs) @ (gd[:, None] * grad_sigma)


def assemble_T2(gs: GroundState, d: IonDensity,
                basis: DualBasis | None = None) -> np.ndarray:
    """Theta-independent ion block <Phi0, grad grad sigma> as a dual sum.

    Pairing the periodic potential against the density curvature gives
    T2 = - sum_m Phi0_m (2pi m)(2pi m)^T conj(sigma_hat(2pi m)).
    """
    basis = basis or gs.basis
    xi = basis.freq()
    weights = gs.phi0.coeffs * np.conj(d(xi))
    T2 = -np.einsum("k,ki,kj->ij", weights, xi, xi)
    return 0.5 * (T2 + T2.conj().T)


@dataclass(frozen=True)
class BlochBlocks:
    """All per-theta operator blocks of the linearized dynamics."""

    theta: BlochParameter
    basis: DualBasis
    e: float
    ion_mass: float
    H0: np.ndarray      # (N, N) Hermitian
    Gdiag: np.ndarray   # (N,) positive (zero entry only in drop-zero mode)
    f: np.ndarray       # (N, N)
    g: np.ndarray       # (N, 3)
    S: np.ndarray       # (N, 3), assembled directly
    T1: np.ndarray      # (3, 3) Hermitian PSD, assembled as the lattice sum
    T2: np.ndarray      # (3, 3) Hermitian
    B: np.ndarray       # (2N+6, 2N+6) Hermitian
    A: np.ndarray       # J B
    zero_mode_dropped: bool = False

    @property
    def size(self) -> int:
        return 2 * self.basis.size + 6


def j_matrix(N: int) -> np.ndarray:
    """Dense symplectic block matrix acting as
    (Psi1, Psi2, Q, P) -> (Psi2/2, -Psi1/2, P, -Q)."""
    n = 2 * N + 6
    J = np.zeros((n, n))
    J[:N, N:2 * N] = 0.5 * np.eye(N)
    J[N:2 * N, :N] = -0.5 * np.eye(N)
    J[2 * N:2 * N + 3, 2 * N + 3:] = np.eye(3)
    J[2 * N + 3:, 2 * N:2 * N + 3] = -np.eye(3)
    return J


def apply_j(vec: np.ndarray, N: int) -> np.ndarray:
    out = np.empty_like(vec)
    out[:N] = 0.5 * vec[N:2 * N]
    out[N:2 * N] = -0.5 * vec[:N]
    out[2 * N:2 * N + 3] = vec[2 * N + 3:]
    out[2 * N + 3:] = -vec[2 * N:2 * N + 3]
    return out


def assemble_blocks(theta, gs: GroundState, d: IonDensity, ion_mass: float = 1.0,
                    basis: DualBasis | None = None, allow_gamma: bool = False,
                    drop_zero: bool = False, T2_cached: np.ndarray | None = None) -> BlochBlocks:
    """Assemble every block at theta and form B and A = J B.

    `drop_zero` switches G(theta) to the zero-mean Poisson convention; it is
    only meaningful (and only allowed) together with `allow_gamma` on the
    supercell fiber theta in the dual lattice.
    """
    if ion_mass <= 0:
        raise InvalidParameterError(f"ion mass must be > 0, got {ion_mass}")
    bp = _to_param(theta)
    _require_usable(bp, allow_gamma)
    basis = basis or gs.basis
    N = basis.size

    H0 = assemble_H0(bp, gs, basis, allow_gamma=allow_gamma)
    Gdiag = green_diag_theta(basis, bp.theta, drop_zero=drop_zero)
    f, g = assemble_fg(bp, gs, d, basis, allow_gamma=allow_gamma, drop_zero=drop_zero)
    S = assemble_S_direct(bp, gs, d, basis, allow_gamma=allow_gamma, drop_zero=drop_zero)

    # direct lattice-sum symbol for the convolution ion block
    xi = basis.freq(bp.theta)
    r2 = np.sum(xi * xi, axis=1)
    w = np.zeros_like(r2)
    nz = r2 > 0
    w[nz] = np.abs(d(xi[nz])) ** 2 / r2[nz]
    T1 = np.einsum("k,ki,kj->ij", w, xi, xi)
    T1 = 0.5 * (T1 + T1.conj().T)

    T2 = assemble_T2(gs, d, basis) if T2_cached is None else T2_cached

    ff = f.conj().T @ f
    ff = 0.5 * (ff + ff.conj().T)

    n = 2 * N + 6
    B = np.zeros((n, n), dtype=complex)
    B[:N, :N] = 2.0 * H0 + 4.0 * ff
    B[N:2 * N, N:2 * N] = 2.0 * H0
    B[:N, 2 * N:2 * N + 3] = 2.0 * S
    B[2 * N:2 * N + 3, :N] = 2.0 * S.conj().T
    B[2 * N:2 * N + 3, 2 * N:2 * N + 3] = T1 + T2
    B[2 * N + 3:, 2 * N + 3:] = np.eye(3) / ion_mass

    A = apply_j(B, N)  # row action of J on the block rows
    return BlochBlocks(theta=bp, basis=basis, e=gs.e, ion_mass=float(ion_mass),
                       H0=H0, Gdiag=Gdiag, f=f, g=g, S=S, T1=T1, T2=T2, B=B, A=A,
                       zero_mode_dropped=bool(drop_zero))


def assemble_A(blocks: BlochBlocks) -> np.ndarray:
    """Generator A = J B of the fiber dynamics (already cached on blocks)."""
    return apply_j(blocks.B, blocks.basis.size)


def psi_green_psi(theta, gs: GroundState, basis: DualBasis | None = None,
                  allow_gamma: bool = False, drop_zero: bool = False) -> np.ndarray:
    """Direct matrix of e^2 psi0 G(theta) psi0 (multiply, solve, multiply) for
    factorization checks against f* f."""
    bp = _to_param(theta)
    _require_usable(bp, allow_gamma)
    basis = basis or gs.basis
    gd = green_diag_theta(basis, bp.theta, drop_zero=drop_zero)
    conv = basis.convolution_matrix(gs.psi0.coeffs)
    return gs.e ** 2 * conv @ (gd[:, None] * conv)


def dump_block_csv(blocks: BlochBlocks, name: str, path):
    """Write one block as CSV rows (row, col, Re, Im)."""
    arr = np.atleast_2d(getattr(blocks, name))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,re,im\n")
        for i in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                v = arr[i, j]
                fh.write(f"{i},{j},{v.real!r},{v.imag!r}\n")
