"""Single-ion charge densities through their Fourier transforms.

Every density is a capsule around a vectorized map xi -> sigma_hat(xi)
with total charge sigma_hat(0) = eZ > 0.  All downstream formulas (lattice
sums, operator factors, linearized forces) consume sigma_hat only, so the
real-space profile is never tabulated.

Two structural conditions matter for stability:

  * the Wiener condition: the 3x3 lattice sum
        Sigma(theta) = sum_m [xi xi^T / |xi|^2 |sigma_hat(xi)|^2]_{xi = 2pi m - theta}
    is positive definite for a.e. theta off the dual lattice;
  * the lattice-zero condition: sigma_hat(2pi m) = 0 for all m != 0, which
    cancels the electrostatic (Earnshaw-type) destabilizing block.

The product family `wai_product_density` satisfies both; the Gaussian
family satisfies only the Wiener condition and is the standard source of
counterexamples once its off-lattice mass is damped (`modulated_density`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ExcludedThetaError, InvalidParameterError
from .lattice import BlochParameter, bloch_parameter

FAMILIES = ("gaussian", "wai_product", "modulated", "custom-table", "custom")


@dataclass(frozen=True)
class IonDensity:
    """Fourier transform of one ion's charge density plus its metadata."""

    sigma_hat: Callable[[np.ndarray], np.ndarray]
    total_charge: float  # eZ = sigma_hat(0)
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameterError(f"unknown density family {self.family!r}")
        # The family constructors demand eZ > 0; the capsule itself tolerates
        # eZ = 0 so that check_conditions can report the violation instead of
        # refusing to look at it.
        if not np.isfinite(self.total_charge) or self.total_charge < 0:
            raise InvalidParameterError(f"total charge must be finite and >= 0, got {self.total_charge}")

    def __call__(self, xi) -> np.ndarray:
        """Evaluate sigma_hat on points of shape (..., 3)."""
        xi = np.asarray(xi, dtype=float)
        return np.asarray(self.sigma_hat(xi), dtype=complex)

    def spec(self) -> dict:
        """JSON-serializable description used for hashing and caching."""
        return {"family": self.family, "eZ": self.total_charge, "params": self.params}

    def spec_json(self) -> str:
        return json.dumps(self.spec(), sort_keys=True)


# ---------------------------------------------------------------------------
# Families


def make_gaussian_density(eZ: float, width: float = 0.1) -> IonDensity:
    """sigma_hat(xi) = eZ exp(-a |xi|^2); nonzero on the whole dual lattice."""
    if not eZ > 0:
        raise InvalidParameterError(f"eZ must be > 0, got {eZ}")
    if not width > 0:
        raise InvalidParameterError(f"width must be > 0, got {width}")
    a = float(width)

    def sigma(xi):
        xi = np.asarray(xi, dtype=float)
        return eZ * np.exp(-a * np.sum(xi * xi, axis=-1))

    return IonDensity(sigma, float(eZ), "gaussian", {"width": a})


def _pulse_factor(s: np.ndarray) -> np.ndarray:
    # 2 sin(s/2)/s * exp(-s^2); equals 1 at s = 0 and vanishes at 2 pi k, k != 0
    return np.sinc(s / (2.0 * np.pi)) * np.exp(-s * s)


def make_wai_product_density(eZ: float) -> IonDensity:
    """Smooth product density with sigma_hat(2pi m) = 0 for every m != 0.

    The 1D factor is 2 sin(s/2)/s * exp(-s^2), so the transform vanishes on
    the punctured dual lattice while sigma_hat(0) = eZ.
    """
    if not eZ > 0:
        raise InvalidParameterError(f"eZ must be > 0, got {eZ}")

    def sigma(xi):
        xi = np.asarray(xi, dtype=float)
        return eZ * (_pulse_factor(xi[..., 0])
                     * _pulse_factor(xi[..., 1])
                     * _pulse_factor(xi[..., 2]))

    return IonDensity(sigma, float(eZ), "wai_product", {})


def make_radial_wai_density(eZ: float, width: float = 0.02) -> IonDensity:
    """Radial density vanishing on every nonzero dual-lattice sphere.

    sigma_hat = eZ * sinc(|xi|^2 / 4pi^2) * exp(-a |xi|^2) is zero exactly
    where |xi|^2 = |2pi m|^2, hence on the punctured dual lattice, but is
    nonzero on coordinate hyperplanes where the product family degenerates.
    """
    if not eZ > 0:
        raise InvalidParameterError(f"eZ must be > 0, got {eZ}")
    if not width > 0:
        raise InvalidParameterError(f"width must be > 0, got {width}")
    a = float(width)

    def sigma(xi):
        xi = np.asarray(xi, dtype=float)
        r2 = np.sum(xi * xi, axis=-1)
        return eZ * np.sinc(r2 / (4.0 * np.pi ** 2)) * np.exp(-a * r2)

    return IonDensity(sigma, float(eZ), "custom", {"kind": "radial_wai", "width": a})


def make_sinc_product_density(eZ: float, width: float = 0.05) -> IonDensity:
    """Product density vanishing on all of (pi Z)^3 away from the origin.

    Each factor sin(s)/s * exp(-a s^2) kills both the punctured dual lattice
    (lattice-zero condition holds) and every half-shifted lattice point
    2pi m - pi, so Sigma((pi,pi,pi)) vanishes identically: the canonical
    witness that the Wiener condition is necessary for coercivity.
    """
    if not eZ > 0:
        raise InvalidParameterError(f"eZ must be > 0, got {eZ}")
    a = float(width)

    def factor(s):
        return np.sinc(s / np.pi) * np.exp(-a * s * s)

    def sigma(xi):
        xi = np.asarray(xi, dtype=float)
        return eZ * factor(xi[..., 0]) * factor(xi[..., 1]) * factor(xi[..., 2])

    return IonDensity(sigma, float(eZ), "custom", {"kind": "sinc_product", "width": a})


def make_custom_density(fn: Callable[[np.ndarray], np.ndarray], eZ: float,
                        label: str = "callable") -> IonDensity:
    return IonDensity(fn, float(eZ), "custom", {"kind": label})


def modulated_density(base: IonDensity, m0, damping: float,
                      mask_width: float = 0.5) -> IonDensity:
    """Damp the off-lattice Fourier mass of `base` while keeping its values
    on the dual lattice intact.

    The mask s + (1-s) sum_k exp(-|xi - 2pi k|^2 / w^2) (k over the nearest
    dual images) equals 1 at dual-lattice points to machine precision and is
    bounded below by s > 0, so the Wiener condition survives while the
    lattice values -- in particular sigma_hat(2pi m0) != 0 -- are preserved.
    """
    m0 = np.asarray(m0, dtype=int).reshape(3)
    if np.all(m0 == 0):
        raise InvalidParameterError("m0 must be a nonzero dual index")
    s = float(damping)
    if not 0 < s <= 1:
        raise InvalidParameterError(f"damping must lie in (0, 1], got {damping}")
    w = float(mask_width)
    base_val = complex(base(2.0 * np.pi * m0.astype(float)))
    if abs(base_val) == 0.0:
        raise InvalidParameterError(
            f"base density vanishes at 2 pi {m0.tolist()}; nothing to preserve")
    shifts = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1],
                                  indexing="ij")).reshape(3, -1).T.astype(float)

    def mask(xi):
        xi = np.asarray(xi, dtype=float)
        nearest = np.round(xi / (2.0 * np.pi))
        centers = 2.0 * np.pi * (nearest[..., None, :] + shifts)
        d2 = np.sum((xi[..., None, :] - centers) ** 2, axis=-1)
        bumps = np.sum(np.exp(-d2 / (w * w)), axis=-1)
        return s + (1.0 - s) * bumps

    def sigma(xi):
        return base(xi) * mask(xi)

    if s == 1.0:
        sigma = base.sigma_hat  # identity mask
    params = {"base": base.spec(), "m0": m0.tolist(), "damping": s, "mask_width": w}
    return IonDensity(sigma, base.total_charge, "modulated", params)


def custom_table_density(rows: np.ndarray, eZ: float) -> IonDensity:
    """Trilinear interpolation of tabulated (xi1, xi2, xi3, Re, Im) samples.

    The rows must cover a full regular grid; outside the table the density
    is extended by zero.
    """
    from scipy.interpolate import RegularGridInterpolator

    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise InvalidParameterError("table must have columns xi1, xi2, xi3, Re, Im")
    axes = [np.unique(rows[:, j]) for j in range(3)]
    shape = tuple(len(ax) for ax in axes)
    if np.prod(shape) != rows.shape[0]:
        raise InvalidParameterError("table rows do not fill a regular grid")
    order = np.lexsort((rows[:, 2], rows[:, 1], rows[:, 0]))
    vals = (rows[order, 3] + 1j * rows[order, 4]).reshape(shape)
    interp = RegularGridInterpolator(axes, vals, method="linear",
                                     bounds_error=False, fill_value=0.0)

    def sigma(xi):
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, 3)
        return interp(flat).reshape(xi.shape[:-1])

    return IonDensity(sigma, float(eZ), "custom-table",
                      {"n_samples": int(rows.shape[0])})


def load_table_density(path, eZ: float) -> IonDensity:
    rows = np.loadtxt(path, delimiter=",", comments="#")
    return custom_table_density(np.atleast_2d(rows), eZ)


def density_from_spec(spec: dict) -> IonDensity:
    """Build a density from its JSON spec {"family", "eZ", "params"}."""
    family = spec.get("family")
    eZ = spec.get("eZ")
    params = dict(spec.get("params") or {})
    if family == "gaussian":
        return make_gaussian_density(eZ, params.get("width", 0.1))
    if family == "wai_product":
        return make_wai_product_density(eZ)
    if family == "modulated":
        base = density_from_spec(params["base"])
        return modulated_density(base, params["m0"], params["damping"],
                                 params.get("mask_width", 0.5))
    if family == "custom-table":
        return load_table_density(params["path"], eZ)
    raise InvalidParameterError(f"cannot build density family {family!r} from a spec")


# ---------------------------------------------------------------------------
# Lattice sums and condition checks


def _dual_cube(M_sum: int) -> np.ndarray:
    r = np.arange(-M_sum, M_sum + 1)
    return np.array(np.meshgrid(r, r, r, indexing="ij")).reshape(3, -1).T.astype(float)


def wiener_matrix(d: IonDensity, theta, M_sum: int = 8) -> np.ndarray:
    """Hermitian PSD 3x3 lattice sum Sigma(theta) over |m|_inf <= M_sum."""
    if isinstance(theta, BlochParameter):
        bp = theta
    else:
        bp = bloch_parameter(theta)
    if bp.excluded:
        raise ExcludedThetaError(f"theta = {bp.theta.tolist()} lies on the dual lattice")
    if M_sum < 1:
        raise InvalidParameterError("M_sum must be >= 1")
    xi = 2.0 * np.pi * _dual_cube(M_sum) - bp.theta[None, :]
    r2 = np.sum(xi * xi, axis=1)
    keep = r2 > 0
    xi, r2 = xi[keep], r2[keep]
    w = np.abs(d(xi)) ** 2 / r2
    sigma = np.einsum("k,ki,kj->ij", w, xi, xi)
    return 0.5 * (sigma + sigma.conj().T)


def wiener_tail_estimate(decay_constant: float, M_sum: int) -> float:
    """Bound C^2 sum_{|m|_inf > M_sum} <2 pi m>^-4 for the truncation tail.

    A shell of explicit terms plus an integral remainder; crude but safe.
    """
    C2 = decay_constant ** 2
    total = 0.0
    for extra in range(M_sum + 1, M_sum + 21):
        r = np.arange(-extra, extra + 1)
        shell = np.array(np.meshgrid(r, r, r, indexing="ij")).reshape(3, -1).T
        on_shell = np.max(np.abs(shell), axis=1) == extra
        m2 = np.sum(shell[on_shell] ** 2, axis=1).astype(float)
        total += float(np.sum((1.0 + 4.0 * np.pi ** 2 * m2) ** -2))
    remainder = 1.0 / (4.0 * np.pi ** 3 * (M_sum + 20))
    return C2 * (total + remainder)


@dataclass(frozen=True)
class ConditionReport:
    satisfies_ro_plus: bool
    satisfies_wai: bool
    wai_max_violation: float
    decay_constant: float
    wiener_min_eig: tuple  # ((theta, min eig), ...) over sampled theta
    tail_estimate: float


def decay_constant(d: IonDensity, M_chk: int = 8, samples_per_axis: int = 9) -> float:
    """Fit C with |sigma_hat(xi)| <= C <xi>^-2 on |xi|_inf <= 2 pi M_chk."""
    s = np.linspace(-2.0 * np.pi * M_chk, 2.0 * np.pi * M_chk, samples_per_axis * M_chk)
    g = np.array(np.meshgrid(s, s, s, indexing="ij")).reshape(3, -1).T
    vals = np.abs(d(g))
    bracket = 1.0 + np.sum(g * g, axis=1)
    return float(np.max(vals * bracket))


def check_conditions(d: IonDensity, tol: float | None = None, M_chk: int = 8,
                     M_sum: int = 8, theta_samples=None) -> ConditionReport:
    """Report the structural conditions; never raises."""
    if tol is None:
        tol = 1e-12 * d.total_charge if d.total_charge > 0 else 1e-12
    ro_plus = d.total_charge > 0 and abs(complex(d(np.zeros(3))) - d.total_charge) <= tol

    cube = _dual_cube(M_chk)
    nonzero = cube[np.any(cube != 0, axis=1)]
    lattice_vals = np.abs(d(2.0 * np.pi * nonzero))
    wai_max = float(np.max(lattice_vals))
    wai = wai_max < tol

    C = decay_constant(d, M_chk=M_chk)
    tail = wiener_tail_estimate(C, M_sum)

    if theta_samples is None:
        theta_samples = [np.full(3, np.pi), np.array([np.pi, np.pi / 2, np.pi / 3]),
                         np.array([np.pi / 2, np.pi / 2, np.pi / 2])]
    record = []
    for th in theta_samples:
        sig = wiener_matrix(d, th, M_sum=M_sum)
        record.append((tuple(np.asarray(th, dtype=float)),
                       float(np.min(np.linalg.eigvalsh(sig)))))
    return ConditionReport(
        satisfies_ro_plus=bool(ro_plus),
        satisfies_wai=bool(wai),
        wai_max_violation=wai_max,
        decay_constant=C,
        wiener_min_eig=tuple(record),
        tail_estimate=tail,
    )
