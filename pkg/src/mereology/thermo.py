"""Canonical thermodynamics of a spectrum and its inversion back to a DOS.

Forward: ``E(T)``, ``C(T) = dE/dT`` and ``S(T) = ln g0 + int C/T dT`` on a
temperature grid (``k_B = 1``). Inverse: the entropy read as a function of
energy gives ``rho(E) ~ exp(S(E))`` from which moments and a subsystem count
follow.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .moments import DELTA4_FLOOR, SubsystemCount, count_from_mu4
from .spectra import SCHEMA_VERSION, Spectrum

__all__ = [
    "ThermoCurve",
    "ReconstructedDos",
    "forward_thermo",
    "canonical_averages",
    "closed_form_entropy",
    "default_temperature_grid",
    "reconstruct_dos",
    "cumulant_moments",
    "thermo_moments",
    "count_from_thermo",
    "DENSITY_COUNT_FLOOR",
]

DEGENERACY_TOLERANCE = 1e-9
# resolution of the reconstructed density's fourth moment; deviations below it are not resolved
DENSITY_COUNT_FLOOR = 0.03


@dataclass(frozen=True, eq=False)
class ThermoCurve:
    temperatures: np.ndarray
    energy: np.ndarray
    heat_capacity: np.ndarray
    entropy: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("temperatures", "energy", "heat_capacity", "entropy"):
            a = np.array(getattr(self, name), dtype=float).ravel()
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        n = arrays["temperatures"].size
        if n < 3:
            raise ValueError("a thermodynamic curve needs at least three temperatures")
        if any(a.size != n for a in arrays.values()):
            raise ValueError("curve arrays must have equal length")
        t = arrays["temperatures"]
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("temperatures must be positive and strictly ascending")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write("T,E,C,S\n")
        for row in zip(self.temperatures, self.energy, self.heat_capacity, self.entropy):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> ThermoCurve:
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            rows.append([float(v) for v in line.split(",")])
        data = np.array(rows, dtype=float)
        if data.ndim != 2 or data.shape[1] != 4:
            raise ValueError("expected four columns T,E,C,S")
        return cls(*data.T)


def _energies(s) -> np.ndarray:
    return s.energies if isinstance(s, Spectrum) else np.sort(np.asarray(s, dtype=float).ravel())


def canonical_averages(s, temperatures) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``<E>``, ``Var(E)`` and ``ln Z`` at each temperature, shifted by the ground energy."""
    e = _energies(s)
    t = np.asarray(temperatures, dtype=float).ravel()
    if np.any(t <= 0):
        raise ValueError("temperatures must be positive")
    e0 = float(e[0])
    x = e - e0
    mean = np.empty(t.size)
    var = np.empty(t.size)
    log_z = np.empty(t.size)
    for k, temp in enumerate(t):
        w = np.exp(-x / temp)
        z = w.sum()
        m = float(np.dot(w, x) / z)
        mean[k] = m + e0
        var[k] = float(np.dot(w, (x - m) ** 2) / z)
        log_z[k] = math.log(z) - e0 / temp
    return mean, var, log_z


def closed_form_entropy(s, temperatures) -> np.ndarray:
    """``S = (E - F) / T`` with ``F = -T ln Z``."""
    t = np.asarray(temperatures, dtype=float).ravel()
    mean, _, log_z = canonical_averages(s, t)
    return mean / t + log_z


def _ground_degeneracy(e: np.ndarray) -> tuple[int, Optional[float]]:
    scale = max(1.0, float(np.max(np.abs(e))))
    ground = np.abs(e - e[0]) <= DEGENERACY_TOLERANCE * scale
    g0 = int(ground.sum())
    gap = float(e[g0] - e[0]) if g0 < e.size else None
    return g0, gap


def default_temperature_grid(s, n: int = 200, lo: float = 0.05, hi: float = 50.0) -> np.ndarray:
    """Log-spaced grid spanning ``[lo, hi]`` times the spectral standard deviation."""
    sd = float(np.std(_energies(s)))
    if not sd > 0:
        raise ValueError("spectrum has zero variance")
    return np.geomspace(lo * sd, hi * sd, n)


def _refine_log_grid(t: np.ndarray, refine: int) -> np.ndarray:
    log_t = np.log(t)
    steps = np.arange(refine) / refine
    inner = (log_t[:-1, None] + np.diff(log_t)[:, None] * steps[None, :]).ravel()
    return np.exp(np.concatenate([inner, log_t[-1:]]))


def forward_thermo(s, t_grid, refine: int = 8, low_t_points: int = 200) -> ThermoCurve:
    """Thermodynamic curve of ``s`` on ``t_grid`` as a calorimetry experiment would see it.

    ``C`` is the central-difference derivative of ``E(T)`` and ``S`` the
    trapezoidal integral of ``C/T`` anchored at ``ln g0`` (``g0`` the ground
    degeneracy). Both are evaluated on the grid subdivided ``refine`` times in
    ``log T`` and reported at the requested temperatures. When the grid starts
    above a fiftieth of the gap, integration begins on an extra log-spaced
    stretch down to that temperature so the anchor holds.
    """
    e = _energies(s)
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size < 3:
        raise ValueError("need at least three temperatures")
    if np.any(t <= 0):
        raise ValueError("temperatures must be positive")
    if np.any(np.diff(t) <= 0):
        raise ValueError("temperatures must be strictly ascending")
    if refine < 1:
        raise ValueError("refine must be >= 1")
    g0, gap = _ground_degeneracy(e)
    full = _refine_log_grid(t, refine)
    n_ext = 0
    if gap is not None and t[0] > gap / 50.0:
        ext = np.geomspace(gap / 50.0, t[0], low_t_points)[:-1]
        n_ext = ext.size
        full = np.concatenate([ext, full])
    mean, _, _ = canonical_averages(e, full)
    heat = np.gradient(mean, full)
    entropy = math.log(g0) + cumulative_trapezoid(heat / full, full, initial=0.0)
    pick = n_ext + refine * np.arange(t.size)
    return ThermoCurve(t, mean[pick], heat[pick], entropy[pick])


@dataclass(frozen=True, eq=False)
class ReconstructedDos:
    """Density samples ``rho(E_k)`` normalised by trapezoidal weights."""

    energies: np.ndarray
    density: np.ndarray

    def moment(self, k: int, about: float = 0.0) -> float:
        return float(trapezoid((self.energies - about) ** k * self.density, self.energies))

    def mean(self) -> float:
        return self.moment(1)

    def variance(self) -> float:
        return self.moment(2, self.mean())

    def standardized_moment(self, k: int) -> float:
        m = self.mean()
        return self.moment(k, m) / self.moment(2, m) ** (k / 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write("E,rho\n")
        for x, r in zip(self.energies, self.density):
            buf.write(f"{float(x)!r},{float(r)!r}\n")
        return buf.getvalue()


def _infinite_t_mean(curve: ThermoCurve) -> float:
    # high-temperature expansion: E(T) = mu - var / T + O(T^-2), and var = T^2 C
    t = curve.temperatures[-1]
    return float(curve.energy[-1] + t * curve.heat_capacity[-1])


def reconstruct_dos(curve: ThermoCurve, saddle_point: bool = True, reflect: bool = True) -> ReconstructedDos:
    """Density of states ``rho(E) ~ exp(S(E))`` from a thermodynamic curve.

    Each temperature contributes the point ``(E(T), S(T))``. With
    ``saddle_point`` the canonical width factor ``1 / sqrt(2 pi T^2 C)`` is
    included. Positive temperatures only reach energies below the
    infinite-temperature mean; ``reflect`` mirrors the samples about that
    mean, which assumes a symmetric density.
    """
    e = curve.energy
    if np.any(np.diff(e) < 0):
        raise ValueError("E(T) decreases somewhere; refine the temperature grid")
    # energies that saturate at the ground level in floating point carry no new information
    fresh = np.concatenate([[True], np.diff(e) > 0])
    e = e[fresh]
    log_rho = curve.entropy[fresh]
    if saddle_point:
        var = (curve.temperatures**2 * curve.heat_capacity)[fresh]
        keep = var > 0
        e, log_rho, var = e[keep], log_rho[keep], var[keep]
        log_rho = log_rho - 0.5 * np.log(2 * math.pi * var)
    if reflect:
        centre = _infinite_t_mean(curve)
        below = e < centre
        e, log_rho = e[below], log_rho[below]
        e = np.concatenate([e, 2 * centre - e[::-1]])
        log_rho = np.concatenate([log_rho, log_rho[::-1]])
    if e.size < 3:
        raise ValueError("too few usable samples to reconstruct a density")
    rho = np.exp(log_rho - log_rho.max())
    rho = rho / trapezoid(rho, e)
    return ReconstructedDos(e, rho)


def cumulant_moments(curve: ThermoCurve, beta_sigma_max: float = 0.5, degree: int = 8) -> dict[int, float]:
    """Standardized third and fourth moments from the high-temperature part of ``E(T)``.

    ``E(beta) = d ln Z / d(-beta)`` so its Taylor coefficients at ``beta = 0``
    are the cumulants: ``E = sum_n (-beta)^n kappa_{n+1} / n!``. A polynomial
    fit over ``beta * sigma <= beta_sigma_max`` recovers ``kappa_2..kappa_4``.
    """
    t = curve.temperatures
    sigma = t[-1] * math.sqrt(max(curve.heat_capacity[-1], 0.0))
    if not sigma > 0:
        raise ValueError("cannot estimate the energy width from the curve")
    beta = 1.0 / t
    mask = beta * sigma <= beta_sigma_max
    if mask.sum() <= degree + 1:
        raise ValueError("too few high-temperature points for the cumulant fit; extend the grid")
    x = beta[mask] * sigma
    y = curve.energy[mask] / sigma
    coef = np.polynomial.Polynomial.fit(x, y, degree).convert().coef
    kappa = {n + 1: (-1) ** n * coef[n] * math.factorial(n) for n in range(1, 4)}
    k2 = kappa[2]
    return {3: float(kappa[3] / k2**1.5), 4: float(3.0 + kappa[4] / k2**2)}


def thermo_moments(curve: ThermoCurve, method: str = "density", **kwargs) -> dict[int, float]:
    """Standardized third and fourth moments of the DOS implied by ``curve``."""
    if method == "density":
        dos = reconstruct_dos(curve, **kwargs)
        return {3: dos.standardized_moment(3), 4: dos.standardized_moment(4)}
    if method == "cumulants":
        return cumulant_moments(curve, **kwargs)
    raise ValueError(f"unknown method {method!r}")


def count_from_thermo(curve: ThermoCurve, method: str = "density", floor: Optional[float] = None, **kwargs) -> SubsystemCount:
    """Subsystem count ``2 / |mu4 - 3|`` from the reconstructed thermodynamics.

    The density route cannot resolve fourth-moment deviations below about
    ``DENSITY_COUNT_FLOOR``, so by default smaller deviations read as
    ``"unbounded"``. The cumulant route is accurate to the fit and uses the
    spectral floor.
    """
    if floor is None:
        floor = DENSITY_COUNT_FLOOR if method == "density" else DELTA4_FLOOR
    mu = thermo_moments(curve, method, **kwargs)
    return count_from_mu4(mu[4], floor)
