"""Energy forms, coercivity scans and the negative-energy construction.

The quadratic form E(theta, Y) = <Y, B(theta) Y> admits the decomposition

    E = 2 <Psi1, H0 Psi1> + |2 f Psi1 + g Q|^2 + Q.T2 Q
        + 2 <Psi2, H0 Psi2> + P.P / M,

an exact identity once S = f* g and T1 = g* g hold; under the
lattice-zero condition T2 vanishes and the form is a sum of squares away
from the dual lattice.  Coercivity kappa(theta) is the smallest
generalized eigenvalue of B(theta) against the diagonal V-norm Gram, and
its sign over a Brillouin grid is the machine-readable stability verdict.

Damping the off-lattice Fourier mass of a density that violates the
lattice-zero condition leaves T2 (a lattice quantity) intact while
shrinking T1(theta), which drives Q.T(theta)Q negative: the explicit
negative-energy construction realized by `build_counterexample` and
`find_negative_mode`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .densities import IonDensity, modulated_density
from .errors import InvalidParameterError, NumericError
from .groundstate import GroundState
from .lattice import BlochParameter, StateVector, bloch_parameter, gram_v
from .operators import BlochBlocks, assemble_blocks, assemble_T2

DEFAULT_EXCLUSION = 0.05 * 2.0 * np.pi


# ---------------------------------------------------------------------------
# Quadratic forms


def energy_form(blocks: BlochBlocks, y: StateVector) -> float:
    """E(theta, Y) = <Y, B Y>; real up to roundoff since B is Hermitian."""
    v = y.as_vector()
    if v.shape[0] != blocks.size:
        raise InvalidParameterError(
            f"state has {v.shape[0]} components, blocks need {blocks.size}")
    return float(np.real(np.vdot(v, blocks.B @ v)))


def energy_form_decomposed(blocks: BlochBlocks, y: StateVector) -> float:
    """Same value through the perfect-square decomposition."""
    v = y.as_vector()
    if v.shape[0] != blocks.size:
        raise InvalidParameterError(
            f"state has {v.shape[0]} components, blocks need {blocks.size}")
    N = blocks.basis.size
    psi1, psi2 = v[:N], v[N:2 * N]
    q, p = v[2 * N:2 * N + 3], v[2 * N + 3:]
    square = 2.0 * blocks.f @ psi1 + blocks.g @ q
    val = (2.0 * np.real(np.vdot(psi1, blocks.H0 @ psi1))
           + float(np.real(np.vdot(square, square)))
           + float(np.real(np.vdot(q, blocks.T2 @ q)))
           + 2.0 * np.real(np.vdot(psi2, blocks.H0 @ psi2))
           + float(np.real(np.vdot(p, p))) / blocks.ion_mass)
    return float(val)


def coercivity(blocks: BlochBlocks, gram: np.ndarray | None = None) -> float:
    """Smallest generalized eigenvalue of B v = kappa G_V v.

    B is block diagonal over (Psi1, Q), (Psi2) and (P), and the Gram is
    diagonal, so the three sectors are solved separately.
    """
    N = blocks.basis.size
    if gram is None:
        gram = gram_v(blocks.basis)
    g = np.asarray(gram, dtype=float)
    if g.shape != (2 * N + 6,):
        raise InvalidParameterError("gram diagonal has the wrong length")
    w1 = g[:N]
    wq = g[2 * N:2 * N + 3]
    wp = g[2 * N + 3:]

    idx = np.concatenate([np.arange(N), np.arange(2 * N, 2 * N + 3)])
    B1q = blocks.B[np.ix_(idx, idx)]
    s1 = 1.0 / np.sqrt(np.concatenate([w1, wq]))
    A1 = s1[:, None] * B1q * s1[None, :]

    w2 = g[N:2 * N]
    s2 = 1.0 / np.sqrt(w2)
    A2 = s2[:, None] * (2.0 * blocks.H0) * s2[None, :]

    try:
        k1 = scipy.linalg.eigh(A1, eigvals_only=True, subset_by_index=[0, 0])[0]
        k2 = scipy.linalg.eigh(A2, eigvals_only=True, subset_by_index=[0, 0])[0]
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - rare LAPACK failure
        raise NumericError(f"generalized eigensolve failed at theta "
                           f"{blocks.theta.theta.tolist()}: {exc}") from exc
    k3 = float(np.min(1.0 / (blocks.ion_mass * wp)))
    return float(min(k1, k2, k3))


# ---------------------------------------------------------------------------
# Brillouin grids and scans


def theta_grid(L: int = 8, centered: bool = True,
               exclusion_radius: float = DEFAULT_EXCLUSION) -> list[BlochParameter]:
    """Uniform L^3 grid of the Brillouin cell minus exclusion balls around
    the dual lattice.  The cell-centered grid (offset by half a step) avoids
    the coordinate hyperplanes on which product densities degenerate."""
    if L < 1:
        raise InvalidParameterError("grid size must be >= 1")
    k = np.arange(L, dtype=float)
    offs = 0.5 if centered else 0.0
    pts = 2.0 * np.pi * (k + offs) / L
    grid = np.array(np.meshgrid(pts, pts, pts, indexing="ij")).reshape(3, -1).T
    out = []
    for th in grid:
        bp = bloch_parameter(th)
        if bp.dist >= exclusion_radius:
            out.append(bp)
    return out


@dataclass(frozen=True)
class ScanRow:
    theta: tuple
    dist: float
    kappa: float
    sigma_min_eig: float
    verdict: str


@dataclass(frozen=True)
class StabilityScan:
    rows: tuple          # ScanRow per scanned theta
    failures: tuple      # (theta, message) for thetas whose assembly failed
    e: float
    cutoff: int
    density_spec: str
    kind: str = "positivity"

    def fraction(self, verdict: str) -> float:
        if not self.rows:
            return 0.0
        return sum(r.verdict == verdict for r in self.rows) / len(self.rows)

    def worst(self) -> ScanRow:
        return min(self.rows, key=lambda r: r.kappa)

    def all_positive(self) -> bool:
        return bool(self.rows) and all(r.verdict == "positive" for r in self.rows)

    def any_negative(self) -> bool:
        return any(r.verdict == "negative" for r in self.rows)


def _verdict(value: float, scale: float) -> str:
    tol = 1e-10 * max(scale, 1.0)
    if value > tol:
        return "positive"
    if value < -tol:
        return "negative"
    return "degenerate"


def positivity_scan(gs: GroundState, d: IonDensity, thetas, ion_mass: float = 1.0,
                    threads: int = 1) -> StabilityScan:
    """Coercivity and Wiener minimum eigenvalue per grid theta.

    Assembly errors at individual thetas are recorded and the scan
    continues.
    """
    gram = gram_v(gs.basis)
    T2 = assemble_T2(gs, d)

    def one(bp: BlochParameter):
        blocks = assemble_blocks(bp, gs, d, ion_mass=ion_mass, T2_cached=T2)
        kappa = coercivity(blocks, gram)
        sig_min = float(np.min(np.linalg.eigvalsh(blocks.T1)))
        scale = float(np.max(np.abs(blocks.B)))
        return ScanRow(theta=tuple(bp.theta), dist=bp.dist, kappa=kappa,
                       sigma_min_eig=sig_min, verdict=_verdict(kappa, scale))

    rows, failures = [], []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda bp: _safe(one, bp), thetas))
    else:
        results = [_safe(one, bp) for bp in thetas]
    for bp, (row, err) in zip(thetas, results):
        if err is not None:
            failures.append((tuple(bp.theta), err))
        else:
            rows.append(row)
    return StabilityScan(rows=tuple(rows), failures=tuple(failures), e=gs.e,
                         cutoff=gs.basis.cutoff, density_spec=d.spec_json())


def wiener_scan(d: IonDensity, thetas, M_sum: int = 8) -> StabilityScan:
    """Wiener matrix minimum eigenvalue per grid theta (no ground state)."""
    from .densities import wiener_matrix

    rows, failures = [], []
    for bp in thetas:
        try:
            sig = wiener_matrix(d, bp, M_sum=M_sum)
            sig_min = float(np.min(np.linalg.eigvalsh(sig)))
            scale = float(np.max(np.abs(sig)))
            rows.append(ScanRow(theta=tuple(bp.theta), dist=bp.dist, kappa=float("nan"),
                                sigma_min_eig=sig_min, verdict=_verdict(sig_min, scale)))
        except Exception as exc:
            failures.append((tuple(bp.theta), str(exc)))
    return StabilityScan(rows=tuple(rows), failures=tuple(failures),
                         e=float("nan"), cutoff=M_sum, density_spec=d.spec_json(),
                         kind="wiener")


def _safe(fn, arg):
    try:
        return fn(arg), None
    except Exception as exc:
        return None, str(exc)


# ---------------------------------------------------------------------------
# Negative-energy construction


def build_counterexample(base: IonDensity, m0, damping: float, e: float | None = None,
                         mask_width: float = 0.5) -> IonDensity:
    """Density violating the lattice-zero condition with the Wiener
    condition intact: the base value at 2 pi m0 is kept while all
    off-lattice mass is damped by the factor `damping`."""
    return modulated_density(base, m0, damping, mask_width)


@dataclass(frozen=True)
class NegativeMode:
    theta: tuple
    Q: np.ndarray
    value: float


def ion_block(theta, gs: GroundState, d: IonDensity,
              T2_cached: np.ndarray | None = None) -> np.ndarray:
    """T(theta) = T1(theta) + T2 on the operator cutoff."""
    basis = gs.basis
    bp = theta if isinstance(theta, BlochParameter) else bloch_parameter(theta)
    xi = basis.freq(bp.theta)
    r2 = np.sum(xi * xi, axis=1)
    w = np.zeros_like(r2)
    nz = r2 > 0
    w[nz] = np.abs(d(xi[nz])) ** 2 / r2[nz]
    T1 = np.einsum("k,ki,kj->ij", w, xi, xi)
    T2 = assemble_T2(gs, d) if T2_cached is None else T2_cached
    T = T1 + T2
    return 0.5 * (T + T.conj().T)


def find_negative_mode(gs: GroundState, d: IonDensity, e: float, thetas,
                       tol: float = 1e-12) -> NegativeMode | None:
    """Search the grid for Q with Q.T(theta)Q < -tol; returns the most
    negative witness or None.

    Embedded as Y = (0, 0, Q, 0) the witness has energy form exactly
    Q.T(theta)Q, so a hit certifies an indefinite energy block.
    """
    if abs(e - gs.e) > 1e-12:
        raise InvalidParameterError("coupling must match the ground state")
    T2 = assemble_T2(gs, d)
    best = None
    for bp in thetas:
        T = ion_block(bp, gs, d, T2_cached=T2)
        vals, vecs = np.linalg.eigh(T)
        if vals[0] < -tol and (best is None or vals[0] < best.value):
            best = NegativeMode(theta=tuple(bp.theta), Q=vecs[:, 0], value=float(vals[0]))
    return best


def kappa_along_ray(gs: GroundState, d: IonDensity, direction, ts,
                    ion_mass: float = 1.0):
    """kappa(theta) along theta = t * direction; returns (dists, kappas)."""
    gram = gram_v(gs.basis)
    T2 = assemble_T2(gs, d)
    direction = np.asarray(direction, dtype=float).reshape(3)
    dists, kappas = [], []
    for t in ts:
        bp = bloch_parameter(t * direction)
        blocks = assemble_blocks(bp, gs, d, ion_mass=ion_mass, T2_cached=T2)
        dists.append(bp.dist)
        kappas.append(coercivity(blocks, gram))
    return np.asarray(dists), np.asarray(kappas)
