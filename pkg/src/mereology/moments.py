"""Moments of spectra and operator sums, Gaussian deviations and DOS tools.

Spectral moments are standardized central moments (zero mean, unit
variance); for a Pauli-string Hamiltonian without identity term these equal
``Tr(H^k) / 2^N`` divided by ``(sum_i h_i^2)^{k/2}``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .pauli import MODELS, ModelSpec, OperatorSum, _mul_exponent, _PHASES, build_model, trace_product
from .spectra import SCHEMA_VERSION, Spectrum

__all__ = [
    "MomentReport",
    "SubsystemCount",
    "DosHistogram",
    "DeltaRow",
    "gaussian_moment",
    "iter_pairings",
    "chord_pairings",
    "standardized_moments",
    "exact_string_moment",
    "string_moment_report",
    "count_subsystems",
    "count_from_mu4",
    "dos_histogram",
    "convolve_dos",
    "dos_l1_distance",
    "partition_function",
    "delta_sweep",
    "loglog_slope",
    "deltas_to_csv",
]

PAIRING_CAP = 8
TUPLE_BUDGET = 10**9
DELTA4_FLOOR = 1e-6


def gaussian_moment(k: int) -> float:
    """``(k-1)!!`` for even ``k`` and 0 for odd ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k % 2:
        return 0.0
    return float(math.prod(range(k - 1, 0, -2)))


def iter_pairings(items: Sequence) -> Iterator[tuple[tuple, ...]]:
    """Yield every perfect pairing of ``items`` (a chord diagram on them)."""
    items = tuple(items)
    if len(items) % 2:
        raise ValueError("need an even number of vertices")
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for idx, partner in enumerate(rest):
        remaining = rest[:idx] + rest[idx + 1 :]
        for tail in iter_pairings(remaining):
            yield ((first, partner),) + tail


def _count_pairings(free: int) -> int:
    # walks every leaf of the pairing tree; ``free`` is a bitmask of unpaired vertices
    if free == 0:
        return 1
    low = free & -free
    rest = free ^ low
    total = 0
    bits = rest
    while bits:
        b = bits & -bits
        total += _count_pairings(rest ^ b)
        bits ^= b
    return total


def chord_pairings(k: int, max_k: int = PAIRING_CAP) -> int:
    """Number of perfect pairings of ``2k`` vertices, by explicit enumeration."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > max_k:
        raise ValueError(f"k={k} exceeds enumeration cap {max_k}")
    count = _count_pairings((1 << (2 * k)) - 1)
    assert count == gaussian_moment(2 * k)
    return count


# -- spectral moments --------------------------------------------------------


@dataclass(frozen=True)
class SubsystemCount:
    """Fourth-moment estimate of the number of elementary subsystems.

    ``status`` is ``"finite"``, ``"unbounded"`` (Gaussian within the floor,
    ``m_hat = inf``) or ``"heavy-tailed"`` (standardized fourth moment above
    3; ``m_hat`` is then negative).
    """

    m_hat: float
    status: str
    mu4: float
    delta4: float
    threshold: float

    @property
    def unbounded(self) -> bool:
        return self.status == "unbounded"

    def to_json_dict(self) -> dict:
        return {
            "m_hat": None if math.isinf(self.m_hat) else self.m_hat,
            "status": self.status,
            "mu4": self.mu4,
            "delta4": self.delta4,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class MomentReport:
    mean: float
    variance: float
    standardized_moments: dict[int, float]
    deltas: dict[int, float]
    m_hat: Optional[float] = None
    count: Optional[SubsystemCount] = field(default=None, compare=False)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mean": self.mean,
            "variance": self.variance,
            "standardized_moments": {str(k): v for k, v in self.standardized_moments.items()},
            "deltas": {str(k): v for k, v in self.deltas.items()},
            "m_hat": None if self.m_hat is None or math.isinf(self.m_hat) else self.m_hat,
            "count": None if self.count is None else self.count.to_json_dict(),
        }


def _as_energies(s: Union[Spectrum, np.ndarray, Sequence[float]]) -> np.ndarray:
    if isinstance(s, Spectrum):
        return s.energies
    return np.asarray(s, dtype=float).ravel()


def _standardized(e: np.ndarray, k_max: int) -> tuple[float, float, dict[int, float]]:
    mean = float(e.mean())
    centred = e - mean
    var = float(np.mean(centred**2))
    if not var > 0:
        raise ValueError("spectrum has zero variance")
    z = centred / math.sqrt(var)
    moments = {}
    zk = z * z
    for k in range(3, k_max + 1):
        zk = zk * z
        moments[k] = float(np.mean(zk))
    return mean, var, moments


def count_from_mu4(mu4: float, floor: float = DELTA4_FLOOR) -> SubsystemCount:
    """Apply ``M = 2 / |mu4 - 3|`` with the Gaussian floor on ``|mu4 - 3|``."""
    delta4 = abs(mu4 - 3.0)
    if delta4 <= floor:
        return SubsystemCount(math.inf, "unbounded", mu4, delta4, floor)
    if mu4 > 3.0:
        return SubsystemCount(-2.0 / delta4, "heavy-tailed", mu4, delta4, floor)
    return SubsystemCount(2.0 / delta4, "finite", mu4, delta4, floor)


def count_subsystems(
    s: Union[Spectrum, np.ndarray],
    floor: float = DELTA4_FLOOR,
    sample: bool = False,
    noise_sigmas: float = 3.0,
) -> SubsystemCount:
    """Estimate the number of subsystems from the fourth standardized moment.

    Args:
        s: spectrum (or raw energies).
        floor: deviations ``|mu4 - 3|`` at or below this are reported as
            ``"unbounded"``.
        sample: treat the energies as independent draws from a density rather
            than an exact spectrum. The floor is then raised to
            ``noise_sigmas * sqrt(24 / D)``, the standard error of the sample
            kurtosis of ``D`` Gaussian draws.
        noise_sigmas: width of the sampling band when ``sample`` is set.
    """
    e = _as_energies(s)
    _, _, m = _standardized(e, 4)
    threshold = floor
    if sample:
        threshold = max(floor, noise_sigmas * math.sqrt(24.0 / e.size))
    return count_from_mu4(m[4], threshold)


def standardized_moments(
    s: Union[Spectrum, np.ndarray], k_max: int = 6, floor: float = DELTA4_FLOOR, sample: bool = False
) -> MomentReport:
    if k_max < 3:
        raise ValueError("k_max must be >= 3")
    e = _as_energies(s)
    if e.size < 2:
        raise ValueError("need at least two energies")
    mean, var, moments = _standardized(e, max(k_max, 4))
    deltas = {k: abs(moments[k] - gaussian_moment(k)) for k in range(3, k_max + 1)}
    count = count_subsystems(e, floor=floor, sample=sample)
    return MomentReport(
        mean=mean,
        variance=var,
        standardized_moments={k: moments[k] for k in range(3, k_max + 1)},
        deltas=deltas,
        m_hat=count.m_hat,
        count=count,
    )


# -- moments from Pauli strings ----------------------------------------------


def _power_coefficients(op: OperatorSum, power: int, max_terms: int) -> dict[tuple[int, int], complex]:
    """Pauli expansion of ``op**power`` as ``{(x_mask, z_mask): coefficient}``."""
    base = [(s.x_mask, s.z_mask, c) for c, s in op.terms]
    current: dict[tuple[int, int], complex] = {(0, 0): 1.0 + 0j}
    for _ in range(power):
        nxt: dict[tuple[int, int], complex] = {}
        for (ax, az), ca in current.items():
            for bx, bz, cb in base:
                x, z, k = _mul_exponent(ax, az, bx, bz)
                key = (x, z)
                nxt[key] = nxt.get(key, 0j) + ca * cb * _PHASES[k]
        if len(nxt) > max_terms:
            raise ValueError(f"intermediate expansion exceeds {max_terms} strings")
        current = nxt
    return current


def exact_string_moment(
    op: OperatorSum,
    k: int,
    method: str = "grouped",
    max_k: int = 6,
    max_terms: int = 5_000_000,
) -> float:
    """``Tr(op^k) / 2^N`` from Pauli-string traces, without diagonalisation.

    ``method="tuples"`` sums :func:`trace_product` over all ``M^k`` index
    tuples (guarded at ``M^k <= 1e9``). ``method="grouped"`` gives the same
    sum by expanding ``op^a`` and ``op^b`` (``a + b = k``) in the Pauli basis
    and using trace orthogonality, ``Tr(P Q) = 2^N delta_PQ``.
    """
    if k < 1 or k > max_k:
        raise ValueError(f"k must be in [1, {max_k}], got {k}")
    m = len(op)
    if m == 0:
        return 0.0
    if method == "tuples":
        if m**k > TUPLE_BUDGET:
            raise ValueError(f"M^k = {m}^{k} exceeds tuple budget {TUPLE_BUDGET:.0e}")
        coefs = op.coefficients
        strings = op.strings
        norm = float(2**op.n_sites)
        total = 0j
        for idx in itertools.product(range(m), repeat=k):
            tr = trace_product([strings[i] for i in idx])
            if tr:
                total += np.prod(coefs[list(idx)]) * tr
        return float(total.real / norm)
    if method != "grouped":
        raise ValueError(f"unknown method {method!r}")
    a = (k + 1) // 2
    left = _power_coefficients(op, a, max_terms)
    right = left if k - a == a else _power_coefficients(op, k - a, max_terms)
    total = sum(c * right[key] for key, c in left.items() if key in right)
    return float(complex(total).real)


def string_moment_report(op: OperatorSum, k_max: int = 4, floor: float = DELTA4_FLOOR) -> MomentReport:
    """Standardized moments and deltas of ``op`` computed from string traces.

    The identity component sets the mean; the remaining terms are normalised
    by ``sum_i h_i^2``, which is the variance of the traceless part.
    """
    if k_max < 3:
        raise ValueError("k_max must be >= 3")
    mean = op.identity_coefficient()
    centred = op.traceless()
    var = float(np.sum(centred.coefficients**2))
    if not var > 0:
        raise ValueError("operator has zero variance")
    moments = {k: exact_string_moment(centred, k) / var ** (k / 2) for k in range(3, max(k_max, 4) + 1)}
    count = count_from_mu4(moments[4], floor)
    return MomentReport(
        mean=mean,
        variance=var,
        standardized_moments={k: moments[k] for k in range(3, k_max + 1)},
        deltas={k: abs(moments[k] - gaussian_moment(k)) for k in range(3, k_max + 1)},
        m_hat=count.m_hat,
        count=count,
    )


@dataclass(frozen=True)
class DeltaRow:
    model: str
    L: int
    k: int
    delta: float


def delta_sweep(
    models: Iterable[str] = ("ising", "xxx", "xxz-nnn"),
    lengths: Iterable[int] = (8, 16, 32, 64),
    ks: Iterable[int] = (4,),
    couplings: Optional[dict[str, dict[str, float]]] = None,
    boundary: str = "open",
) -> list[DeltaRow]:
    """Gaussian deviations ``Delta_k`` versus chain length from string moments."""
    couplings = couplings or {}
    ks = sorted(set(ks))
    rows = []
    for model in models:
        for L in lengths:
            op = build_model(ModelSpec(model, L, couplings.get(model, {}), boundary))
            report = string_moment_report(op, k_max=max(4, max(ks)))
            for k in ks:
                rows.append(DeltaRow(op_model_name(model), L, k, report.deltas[k]))
    return rows


def op_model_name(model: str) -> str:
    return ModelSpec(model, 2).model


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def deltas_to_csv(rows: Sequence[DeltaRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "L", "k", "delta"])
    for r in rows:
        w.writerow([r.model, r.L, r.k, repr(float(r.delta))])
    return buf.getvalue()


# -- density of states -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DosHistogram:
    """Piecewise-constant density on ascending ``bin_edges``."""

    bin_edges: np.ndarray
    densities: np.ndarray

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=float).ravel()
        dens = np.array(self.densities, dtype=float).ravel()
        if dens.size == 0:
            raise ValueError("empty histogram")
        if edges.size != dens.size + 1:
            raise ValueError("need len(bin_edges) == len(densities) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly ascending")
        if np.any(dens < 0):
            raise ValueError("densities must be nonnegative")
        total = float(np.sum(dens * np.diff(edges)))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"histogram integrates to {total}, expected 1")
        edges.setflags(write=False)
        dens.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "densities", dens)

    @classmethod
    def from_masses(cls, bin_edges, masses) -> DosHistogram:
        edges = np.asarray(bin_edges, dtype=float)
        m = np.clip(np.asarray(masses, dtype=float), 0.0, None)
        m = m / m.sum()
        return cls(edges, m / np.diff(edges))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.widths

    def cdf(self, x) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(x, self.bin_edges, cum, left=0.0, right=1.0)

    def raw_moment(self, k: int, about: float = 0.0) -> float:
        """``int (x - about)^k rho(x) dx`` for the piecewise-uniform density."""
        lo = self.bin_edges[:-1] - about
        hi = self.bin_edges[1:] - about
        return float(np.sum(self.densities * (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)))

    def mean(self) -> float:
        return self.raw_moment(1)

    def variance(self) -> float:
        return self.raw_moment(2, about=self.mean())

    def standardized_moment(self, k: int) -> float:
        m = self.mean()
        return self.raw_moment(k, about=m) / self.raw_moment(2, about=m) ** (k / 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write("left,right,density\n")
        for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.densities):
            buf.write(f"{float(lo)!r},{float(hi)!r},{float(d)!r}\n")
        return buf.getvalue()


def dos_histogram(s: Union[Spectrum, np.ndarray], n_bins: int) -> DosHistogram:
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    e = _as_energies(s)
    lo, hi = float(e.min()), float(e.max())
    if not hi > lo:
        raise ValueError("degenerate energy range: all energies equal")
    counts, edges = np.histogram(e, bins=n_bins, range=(lo, hi))
    return DosHistogram(edges, counts / (e.size * np.diff(edges)))


def _rebin(h: DosHistogram, start: float, width: float, n: int) -> np.ndarray:
    edges = start + width * np.arange(n + 1)
    return np.diff(h.cdf(edges))


def _uniform_grid(h: DosHistogram, width: float) -> tuple[float, int]:
    span = h.bin_edges[-1] - h.bin_edges[0]
    n = max(1, int(math.ceil(span / width - 1e-9)))
    return float(h.bin_edges[0]), n


def convolve_dos(a: DosHistogram, b: DosHistogram) -> DosHistogram:
    """Density of ``X + Y`` for independent ``X ~ a``, ``Y ~ b``.

    Both inputs are linearly rebinned onto uniform grids of the smaller bin
    width ``w``. The sum of two bin-uniform variables is triangular over two
    output bins with half its mass in each, which fixes the bin masses of the
    result exactly.
    """
    w = float(min(a.widths.min(), b.widths.min()))
    a0, na = _uniform_grid(a, w)
    b0, nb = _uniform_grid(b, w)
    ma = _rebin(a, a0, w, na)
    mb = _rebin(b, b0, w, nb)
    c = np.convolve(ma, mb)
    masses = 0.5 * (np.concatenate([c, [0.0]]) + np.concatenate([[0.0], c]))
    edges = a0 + b0 + w * np.arange(na + nb + 1)
    return DosHistogram.from_masses(edges, masses)


def dos_l1_distance(p: DosHistogram, q: DosHistogram, width: Optional[float] = None) -> float:
    """``int |p - q|`` after rebinning both onto a shared uniform grid."""
    w = float(width or min(p.widths.min(), q.widths.min()))
    lo = min(p.bin_edges[0], q.bin_edges[0])
    hi = max(p.bin_edges[-1], q.bin_edges[-1])
    n = max(1, int(math.ceil((hi - lo) / w - 1e-9)))
    edges = lo + w * np.arange(n + 1)
    mp = np.diff(p.cdf(edges))
    mq = np.diff(q.cdf(edges))
    return float(np.sum(np.abs(mp - mq)))


def partition_function(s: Union[Spectrum, np.ndarray], t) -> Union[complex, np.ndarray]:
    """``Z(t) = sum_n exp(i t E_n)``; vectorised over ``t``."""
    e = _as_energies(s)
    t_arr = np.asarray(t, dtype=float)
    flat = t_arr.ravel()
    out = np.empty(flat.size, dtype=complex)
    chunk = max(1, 2_000_000 // max(e.size, 1))
    for start in range(0, flat.size, chunk):
        tt = flat[start : start + chunk]
        out[start : start + chunk] = np.exp(1j * np.outer(tt, e)).sum(axis=1)
    if t_arr.ndim == 0:
        return complex(out[0])
    return out.reshape(t_arr.shape)
