"""Truncated dual lattice, periodic fields and discrete Bloch transforms.

The crystal lattice is the unit cubic lattice, so the dual lattice is
2*pi*Z^3 and the primitive Brillouin cell is [0, 2pi]^3.  Periodic
functions on the unit torus are stored through their Fourier coefficients
on the truncated dual cube {m in Z^3 : |m|_inf <= M}, with the convention

    f(x) = sum_m c_m exp(-i 2pi m.x),    c_m = int_T3 exp(+i 2pi m.x) f(x) dx.

With this pairing the shifted kinetic operator and the periodic Green
operator are diagonal in m with denominators |2pi m - theta|^2, which is
the convention every operator module of the package relies on.  One
conformance test (tests/test_lattice.py) pins it against an explicit
point evaluation.

Supercell states over L^3 cells are reduced by the discrete Bloch
transform, a plain DFT over the cell index,

    Ytilde(theta_k) = sum_n exp(-i n.theta_k) Y(n),    theta_k = 2pi k / L,

whose fiber coefficients pair with the frequencies 2pi m - theta_k.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BasisMismatchError, InvalidParameterError

# Hard exclusion radius around dual-lattice points; the fiber operators are
# singular on the dual lattice itself, so quasimomenta closer than this are
# rejected rather than silently regularized.
EPS_EXCL = 1e-6 * 2.0 * np.pi


def _as_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(3)
    return theta


def dist_to_dual(theta) -> float:
    """Distance from theta to the dual lattice 2pi Z^3.

    Minimized over the 27 dual images nearest to theta (the rounded image
    and its unit-shell neighbours), which is exact for any theta.
    """
    theta = _as_theta(theta)
    base = np.round(theta / (2.0 * np.pi))
    shifts = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1],
                                  indexing="ij")).reshape(3, -1).T
    images = 2.0 * np.pi * (base[None, :] + shifts)
    return float(np.min(np.linalg.norm(theta[None, :] - images, axis=1)))


@dataclass(frozen=True)
class BlochParameter:
    """Quasimomentum theta with its distance to the dual lattice."""

    theta: np.ndarray
    dist: float
    excluded: bool

    @property
    def d(self) -> float:
        return self.dist


def bloch_parameter(theta, eps_excl: float = EPS_EXCL) -> BlochParameter:
    theta = _as_theta(theta)
    theta.flags.writeable = False
    d = dist_to_dual(theta)
    return BlochParameter(theta=theta, dist=d, excluded=bool(d < eps_excl))


@dataclass(frozen=True)
class DualBasis:
    """Truncated dual cube |m|_inf <= M in deterministic lexicographic order."""

    cutoff: int
    points: np.ndarray  # (N, 3) int

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def index_of(self, m) -> int:
        m = np.asarray(m, dtype=int).reshape(3)
        M = self.cutoff
        if np.any(np.abs(m) > M):
            raise InvalidParameterError(f"dual point {m.tolist()} outside cutoff {M}")
        side = 2 * M + 1
        return int(((m[0] + M) * side + (m[1] + M)) * side + (m[2] + M))

    def freq(self, theta=None) -> np.ndarray:
        """Frequencies 2pi m - theta, shape (N, 3)."""
        xi = 2.0 * np.pi * self.points.astype(float)
        if theta is not None:
            xi = xi - _as_theta(theta)[None, :]
        return xi

    @cached_property
    def _diff_flat(self) -> np.ndarray:
        # Flat lookup indices of m_i - m_j into a zero-padded (4M+1)^3 cube;
        # used to build multiplication (convolution) matrices.
        M = self.cutoff
        side = 4 * M + 1
        d = self.points[:, None, :] - self.points[None, :, :] + 2 * M
        return ((d[..., 0] * side + d[..., 1]) * side + d[..., 2]).astype(np.int64)

    def convolution_matrix(self, coeffs: np.ndarray) -> np.ndarray:
        """Dense Galerkin matrix of multiplication by the field with the
        given coefficients: A[i, j] = c(m_i - m_j), zero beyond the cutoff."""
        M = self.cutoff
        cube = np.zeros((4 * M + 1,) * 3, dtype=complex)
        lo, hi = M, 3 * M + 1
        cube[lo:hi, lo:hi, lo:hi] = np.asarray(coeffs).reshape((2 * M + 1,) * 3)
        return cube.reshape(-1)[self._diff_flat]

    @cached_property
    def _reflect_index(self) -> np.ndarray:
        # Index of -m for every basis point (the cube is symmetric).
        M = self.cutoff
        side = 2 * M + 1
        mm = -self.points
        return (((mm[:, 0] + M) * side + (mm[:, 1] + M)) * side + (mm[:, 2] + M)).astype(np.int64)


def make_basis(M: int) -> DualBasis:
    """Truncated dual basis with N = (2M+1)^3 points, m = 0 included."""
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise InvalidParameterError(f"cutoff must be an integer >= 1, got {M!r}")
    r = np.arange(-M, M + 1)
    grid = np.array(np.meshgrid(r, r, r, indexing="ij"))
    points = grid.reshape(3, -1).T.copy()
    points.flags.writeable = False
    return DualBasis(cutoff=int(M), points=points)


# ---------------------------------------------------------------------------
# Periodic fields


@dataclass(frozen=True)
class FourierField:
    """Coefficients of a Gamma-periodic function on the truncated dual cube."""

    basis: DualBasis
    coeffs: np.ndarray  # (N,) complex

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.basis.size,):
            raise BasisMismatchError(
                f"coefficient vector has shape {c.shape}, basis needs ({self.basis.size},)")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    # -- norms ------------------------------------------------------------
    def norm_l2(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def norm_h1(self) -> float:
        w = 1.0 + np.sum(self.basis.freq() ** 2, axis=1)
        return float(np.sqrt(np.sum(w * np.abs(self.coeffs) ** 2)))

    def norm_h2(self) -> float:
        w = 1.0 + np.sum(self.basis.freq() ** 2, axis=1)
        return float(np.sqrt(np.sum(w ** 2 * np.abs(self.coeffs) ** 2)))

    def norm_laplacian(self) -> float:
        """Homogeneous H^2 seminorm |Delta f|_L2 (the natural norm for the
        periodic Poisson bound)."""
        k2 = np.sum(self.basis.freq() ** 2, axis=1)
        return float(np.sqrt(np.sum(k2 ** 2 * np.abs(self.coeffs) ** 2)))

    # -- structure --------------------------------------------------------
    def mean(self) -> complex:
        return complex(self.coeffs[self.basis.index_of((0, 0, 0))])

    def reality_defect(self) -> float:
        """Max |c(-m) - conj(c(m))|; zero iff the represented function is real."""
        refl = np.conj(self.coeffs)[self.basis._reflect_index]
        return float(np.max(np.abs(self.coeffs - refl)))

    def real_part(self) -> "FourierField":
        refl = np.conj(self.coeffs)[self.basis._reflect_index]
        return FourierField(self.basis, 0.5 * (self.coeffs + refl))

    def evaluate(self, x) -> complex:
        """Point evaluation sum_m c_m exp(-i 2pi m.x); conformance helper."""
        x = np.asarray(x, dtype=float).reshape(3)
        phase = np.exp(-2j * np.pi * (self.basis.points @ x))
        return complex(np.sum(self.coeffs * phase))


def zero_field(basis: DualBasis) -> FourierField:
    return FourierField(basis, np.zeros(basis.size, dtype=complex))


def constant_field(basis: DualBasis, value: complex) -> FourierField:
    c = np.zeros(basis.size, dtype=complex)
    c[basis.index_of((0, 0, 0))] = value
    return FourierField(basis, c)


def inner_l2(f: FourierField, g: FourierField) -> complex:
    if f.basis is not g.basis and f.basis.cutoff != g.basis.cutoff:
        raise BasisMismatchError("fields live on different bases")
    return complex(np.vdot(f.coeffs, g.coeffs))


# ---------------------------------------------------------------------------
# State vectors Y = (Psi1, Psi2, Q, P)


@dataclass(frozen=True)
class StateVector:
    """Two truncated fields plus the per-cell ion displacement and momentum."""

    psi1: FourierField
    psi2: FourierField
    q: np.ndarray  # (3,) complex
    p: np.ndarray  # (3,) complex

    def __post_init__(self):
        if self.psi1.basis.cutoff != self.psi2.basis.cutoff:
            raise BasisMismatchError("psi1 and psi2 must share one dual basis")
        q = np.asarray(self.q, dtype=complex).reshape(3).copy()
        p = np.asarray(self.p, dtype=complex).reshape(3).copy()
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def basis(self) -> DualBasis:
        return self.psi1.basis

    def as_vector(self) -> np.ndarray:
        """Pack into the (2N+6,) block vector [psi1, psi2, q, p]."""
        return np.concatenate([self.psi1.coeffs, self.psi2.coeffs, self.q, self.p])

    def norm_x(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


def state_from_vector(basis: DualBasis, vec: np.ndarray) -> StateVector:
    N = basis.size
    vec = np.asarray(vec, dtype=complex).reshape(2 * N + 6)
    return StateVector(
        psi1=FourierField(basis, vec[:N]),
        psi2=FourierField(basis, vec[N:2 * N]),
        q=vec[2 * N:2 * N + 3],
        p=vec[2 * N + 3:],
    )


def zero_state(basis: DualBasis) -> StateVector:
    return state_from_vector(basis, np.zeros(2 * basis.size + 6, dtype=complex))


def inner_x(y1: StateVector, y2: StateVector) -> complex:
    """Sesquilinear product of X(T^3), conjugate on the first slot."""
    if y1.basis.cutoff != y2.basis.cutoff:
        raise BasisMismatchError("states live on different bases")
    return complex(np.vdot(y1.as_vector(), y2.as_vector()))


def gram_v(basis: DualBasis) -> np.ndarray:
    """Diagonal of the V-norm Gram: H^1 weights 1 + |2pi m|^2 on both field
    blocks, unit weights on the ion blocks."""
    w = 1.0 + np.sum(basis.freq() ** 2, axis=1)
    return np.concatenate([w, w, np.ones(6)])


def norm_v(y: StateVector) -> float:
    g = gram_v(y.basis)
    return float(np.sqrt(np.sum(g * np.abs(y.as_vector()) ** 2)))


# ---------------------------------------------------------------------------
# Supercell states and the discrete Bloch transform


@dataclass(frozen=True)
class SupercellState:
    """Per-cell state sequence Y(n) over an L^3 periodic supercell.

    Cells are ordered lexicographically, flat = (n1*L + n2)*L + n3.
    """

    basis: DualBasis
    L: int
    psi1: np.ndarray  # (L^3, N)
    psi2: np.ndarray  # (L^3, N)
    q: np.ndarray     # (L^3, 3)
    p: np.ndarray     # (L^3, 3)

    def __post_init__(self):
        n_cells = self.L ** 3
        N = self.basis.size
        for name, arr, shape in (("psi1", self.psi1, (n_cells, N)),
                                 ("psi2", self.psi2, (n_cells, N)),
                                 ("q", self.q, (n_cells, 3)),
                                 ("p", self.p, (n_cells, 3))):
            a = np.asarray(arr, dtype=complex)
            if a.shape != shape:
                raise BasisMismatchError(f"{name} has shape {a.shape}, expected {shape}")
            a = a.copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def cell(self, n) -> StateVector:
        n = np.asarray(n, dtype=int).reshape(3) % self.L
        flat = int((n[0] * self.L + n[1]) * self.L + n[2])
        return StateVector(FourierField(self.basis, self.psi1[flat]),
                           FourierField(self.basis, self.psi2[flat]),
                           self.q[flat], self.p[flat])

    def norm_x2(self) -> float:
        return float(sum(np.sum(np.abs(a) ** 2) for a in (self.psi1, self.psi2, self.q, self.p)))


def supercell_from_cells(basis: DualBasis, L: int, states) -> SupercellState:
    if L < 1:
        raise InvalidParameterError(f"supercell size must be >= 1, got {L}")
    n_cells = L ** 3
    N = basis.size
    psi1 = np.zeros((n_cells, N), complex)
    psi2 = np.zeros((n_cells, N), complex)
    q = np.zeros((n_cells, 3), complex)
    p = np.zeros((n_cells, 3), complex)
    for flat, y in enumerate(states):
        psi1[flat] = y.psi1.coeffs
        psi2[flat] = y.psi2.coeffs
        q[flat] = y.q
        p[flat] = y.p
    return SupercellState(basis, L, psi1, psi2, q, p)


def theta_grid_of(L: int) -> np.ndarray:
    """Bloch grid theta_k = 2pi k / L in DFT (lexicographic k) order, (L^3, 3)."""
    k = np.arange(L)
    grid = np.array(np.meshgrid(k, k, k, indexing="ij")).reshape(3, -1).T
    return 2.0 * np.pi * grid / L


@dataclass(frozen=True)
class BlochDecomposition:
    """Fibers Ytilde(theta_k) of a supercell state, in DFT order."""

    basis: DualBasis
    L: int
    thetas: np.ndarray  # (L^3, 3)
    psi1: np.ndarray    # (L^3, N)
    psi2: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def fiber(self, k) -> StateVector:
        k = np.asarray(k, dtype=int).reshape(3) % self.L
        flat = int((k[0] * self.L + k[1]) * self.L + k[2])
        return StateVector(FourierField(self.basis, self.psi1[flat]),
                           FourierField(self.basis, self.psi2[flat]),
                           self.q[flat], self.p[flat])

    def norm_x2(self) -> float:
        return float(sum(np.sum(np.abs(a) ** 2) for a in (self.psi1, self.psi2, self.q, self.p)))


def _dft_cells(arr: np.ndarray, L: int, inverse: bool) -> np.ndarray:
    shaped = arr.reshape(L, L, L, -1)
    if inverse:
        out = np.fft.ifftn(shaped, axes=(0, 1, 2))
    else:
        out = np.fft.fftn(shaped, axes=(0, 1, 2))
    return out.reshape(arr.shape)


def bloch_decompose(state: SupercellState) -> BlochDecomposition:
    """Forward transform sum_n exp(-i n.theta_k) Y(n) over the cell index."""
    L = state.L
    if L < 1:
        raise InvalidParameterError("supercell size must be >= 1")
    return BlochDecomposition(
        basis=state.basis, L=L, thetas=theta_grid_of(L),
        psi1=_dft_cells(state.psi1, L, inverse=False),
        psi2=_dft_cells(state.psi2, L, inverse=False),
        q=_dft_cells(state.q, L, inverse=False),
        p=_dft_cells(state.p, L, inverse=False),
    )


def bloch_reconstruct(dec: BlochDecomposition) -> SupercellState:
    """Inverse transform Y(n) = L^-3 sum_k exp(+i n.theta_k) Ytilde(theta_k)."""
    L = dec.L
    return SupercellState(
        basis=dec.basis, L=L,
        psi1=_dft_cells(dec.psi1, L, inverse=True),
        psi2=_dft_cells(dec.psi2, L, inverse=True),
        q=_dft_cells(dec.q, L, inverse=True),
        p=_dft_cells(dec.p, L, inverse=True),
    )
