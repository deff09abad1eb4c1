"""Bipartition of a spectrum into two factor spectra.

Given sorted energies ``E`` of length ``D = d_a * d_b`` we look for ``A`` and
``B`` such that the sorted outer sum ``A (+) B`` matches ``E`` level by level.
The mismatch ``cost = mean((E - sorted(A (+) B))**2)`` is minimised with BFGS,
re-sorting at every evaluation.
"""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .spectra import SCHEMA_VERSION, Spectrum

__all__ = [
    "INIT_SCHEMES",
    "PartitionOptions",
    "PartitionResult",
    "PartitionNode",
    "outer_sum",
    "cost_and_gradient",
    "minimize_partition",
    "spectral_norm_error",
    "assemble_partitioned_diagonal",
    "recursive_partition",
    "peel_factors",
    "SPECTRAL_NORM_FLOOR",
    "goe_spectral_norm_sweep",
    "evaluate_partition",
    "cost_implied_l1_bound",
]

INIT_SCHEMES = ("random-gaussian", "quantile-block", "peel")
SPECTRAL_NORM_FLOOR = -52.0


@dataclass(frozen=True)
class PartitionOptions:
    """Solver settings.

    ``init_scheme`` picks the starting point of restart 0; later restarts
    always draw ``random-gaussian`` starts. ``peel`` tries an exact
    combinatorial reconstruction first and falls back to a random start when
    the spectrum is not an exact outer sum.
    """

    restarts: int = 4
    max_iterations: int = 10_000
    gradient_tolerance: float = 1e-12
    seed: int = 0
    init_scheme: str = "random-gaussian"
    target_cost: Optional[float] = None
    peel_tolerance: float = 1e-9
    peel_budget: int = 200_000

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not self.peel_tolerance > 0:
            raise ValueError("peel_tolerance must be positive")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}; choose from {INIT_SCHEMES}")
        if self.target_cost is not None and self.target_cost < 0:
            raise ValueError("target_cost must be nonnegative")


@dataclass
class PartitionResult:
    a: Spectrum
    b: Spectrum
    cost: float
    p1: np.ndarray
    p2: np.ndarray
    epsilon: np.ndarray
    h_int_norm: float
    trace: list[tuple[int, float]] = field(default_factory=list)
    restarts_used: int = 1
    restart_costs: list[float] = field(default_factory=list)
    init_used: str = "random-gaussian"

    @property
    def dimension(self) -> int:
        return self.epsilon.size

    @property
    def partitioned_energies(self) -> np.ndarray:
        """``sorted(A (+) B)``, the spectrum of the non-interacting approximation."""
        return np.sort(outer_sum(self.a.energies, self.b.energies))

    def to_json_dict(self, e: Optional[Spectrum] = None) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "a": self.a.energies.tolist(),
            "b": self.b.energies.tolist(),
            "cost": self.cost,
            "spectral_norm": None if e is None else spectral_norm_error(e, self),
            "epsilon_max": self.h_int_norm,
            "restarts_used": self.restarts_used,
            "restart_costs": list(self.restart_costs),
            "init_used": self.init_used,
            "trace": [[int(i), float(c)] for i, c in self.trace],
        }
        return out


def outer_sum(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """All ``a[i] + b[j]`` in row-major order (``i`` major)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("outer_sum needs nonempty inputs")
    return (a[:, None] + b[None, :]).ravel()


def _residuals(e_sorted: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = outer_sum(a, b)
    order = np.argsort(s, kind="stable")
    r = np.empty_like(s)
    r[order] = e_sorted - s[order]
    return r, order


def cost_and_gradient(e_sorted, a, b) -> tuple[float, np.ndarray, np.ndarray]:
    """Sorted-matching cost and its gradient with the sort held fixed.

    ``r[(i, j)]`` is ``E`` at the sorted position of ``a[i] + b[j]`` minus that
    sum, so ``grad_a[i] = -(2/D) sum_j r[i, j]`` and likewise for ``b``.
    """
    e_sorted = np.asarray(e_sorted, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size * b.size != e_sorted.size:
        raise ValueError(f"|a|*|b| = {a.size * b.size} != |E| = {e_sorted.size}")
    r, _ = _residuals(e_sorted, a, b)
    d = e_sorted.size
    grid = r.reshape(a.size, b.size)
    cost = float(np.mean(r * r))
    return cost, -2.0 / d * grid.sum(axis=1), -2.0 / d * grid.sum(axis=0)


# -- initialisation ----------------------------------------------------------


def _random_start(e0: np.ndarray, d_a: int, d_b: int, rng: np.random.Generator) -> np.ndarray:
    scale = math.sqrt(float(np.var(e0)) / 2.0)
    a = rng.normal(float(np.mean(e0)), scale, size=d_a)
    b = rng.normal(0.0, scale, size=d_b)
    return np.concatenate([a, b])


def _quantile_start(e0: np.ndarray, d_a: int, d_b: int) -> np.ndarray:
    blocks = e0.reshape(d_a, d_b)
    a = blocks.mean(axis=1)
    b = (blocks - a[:, None]).mean(axis=0)
    return np.concatenate([a, b])


class _LevelPool:
    """Sorted levels with O(log D) lookup of an unused level near a value."""

    def __init__(self, levels: np.ndarray, tol: float):
        self.levels = levels.tolist()
        self.used = [False] * len(self.levels)
        self.tol = tol
        self.first_free = 0

    def smallest_free(self) -> Optional[int]:
        i = self.first_free
        while i < len(self.used) and self.used[i]:
            i += 1
        self.first_free = i
        return i if i < len(self.used) else None

    def take(self, value: float) -> Optional[int]:
        lo = bisect.bisect_left(self.levels, value - self.tol)
        best, best_gap = None, None
        i = lo
        while i < len(self.levels) and self.levels[i] <= value + self.tol:
            if not self.used[i]:
                gap = abs(self.levels[i] - value)
                if best is None or gap < best_gap:
                    best, best_gap = i, gap
            i += 1
        if best is not None:
            self.used[best] = True
        return best

    def release(self, idx: Sequence[int]) -> None:
        for i in idx:
            self.used[i] = False
            if i < self.first_free:
                self.first_free = i


def peel_factors(
    e_sorted: np.ndarray, d_a: int, d_b: int, tol: float = 1e-9, budget: int = 200_000
) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Exact reconstruction of ``A, B`` from ``E = sorted(A (+) B)``, if one exists.

    With the gauge ``min B = 0`` the smallest level fixes ``min A``. The
    smallest level not yet explained by known elements must be either a new
    ``A`` element plus ``min B`` or ``min A`` plus a new ``B`` element. Each
    guess is accepted only if all its sums with the known partner elements are
    present among the unexplained levels (within ``tol``), and the search
    backtracks otherwise. Returns ``None`` when no exact decomposition is
    found within ``budget`` search nodes.
    """
    e = np.asarray(e_sorted, dtype=float)
    if e.size != d_a * d_b:
        raise ValueError("dimension mismatch")
    pool = _LevelPool(e, tol)
    A: list[float] = []
    B: list[float] = []
    nodes = 0

    def add(value: float, partners: list[float]) -> Optional[list[int]]:
        taken = []
        for p in partners:
            idx = pool.take(value + p)
            if idx is None:
                pool.release(taken)
                return None
            taken.append(idx)
        return taken

    def search() -> bool:
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            return False
        x_idx = pool.smallest_free()
        if x_idx is None:
            return len(A) == d_a and len(B) == d_b
        x = pool.levels[x_idx]
        options = []
        if len(A) < d_a:
            options.append(("a", x - B[0]))
        if len(B) < d_b:
            options.append(("b", x - A[0]))
        for side, value in options:
            own, other = (A, B) if side == "a" else (B, A)
            taken = add(value, other)
            if taken is None:
                continue
            own.append(value)
            if search():
                return True
            own.pop()
            pool.release(taken)
            if nodes > budget:
                return False
        return False

    A.append(float(e[0]))
    B.append(0.0)
    pool.used[0] = True
    if not search():
        return None
    return np.array(A), np.array(B)


# -- solver ------------------------------------------------------------------


def _solve_once(e0: np.ndarray, x0: np.ndarray, d_a: int, opts: PartitionOptions):
    n = e0.size
    d_b = n // d_a
    trace: list[tuple[int, float]] = []

    def fun(x):
        c, ga, gb = cost_and_gradient(e0, x[:d_a], x[d_a:])
        return c, np.concatenate([ga, gb])

    def record(intermediate_result):
        trace.append((len(trace) + 1, float(intermediate_result.fun)))

    c0, _ = fun(x0)
    trace.append((0, float(c0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.filterwarnings("ignore", message=".*precision loss.*")
        res = minimize(
            fun,
            x0,
            jac=True,
            method="BFGS",
            callback=record,
            options={"maxiter": opts.max_iterations, "gtol": opts.gradient_tolerance},
        )
    x = res.x
    final, _ = fun(x)
    # BFGS never returns a worse point than its start, but guard anyway
    if not final <= c0:
        x, final = x0, c0
    return x, float(final), trace


def _initial_point(e0, d_a, d_b, opts: PartitionOptions, r: int) -> tuple[np.ndarray, str]:
    rng = np.random.default_rng([opts.seed, r])
    scheme = opts.init_scheme if r == 0 else "random-gaussian"
    if scheme == "peel":
        found = peel_factors(e0, d_a, d_b, tol=opts.peel_tolerance, budget=opts.peel_budget)
        if found is not None:
            return np.concatenate(found), scheme
        scheme = "random-gaussian"
    if scheme == "quantile-block":
        return _quantile_start(e0, d_a, d_b), scheme
    return _random_start(e0, d_a, d_b, rng), scheme


def _run_restart(args):
    e0, d_a, d_b, opts, r = args
    x0, scheme = _initial_point(e0, d_a, d_b, opts, r)
    try:
        x, c, trace = _solve_once(e0, x0, d_a, opts)
    except (FloatingPointError, ValueError):
        return None
    if not math.isfinite(c):
        return None
    return x, c, trace, scheme


def minimize_partition(
    e: Spectrum, d_a: int, d_b: int, opts: Optional[PartitionOptions] = None, jobs: int = 1
) -> PartitionResult:
    """Best bipartition of ``e`` over ``opts.restarts`` BFGS runs.

    Restart ``r`` draws from ``default_rng([seed, r])``, so the outcome does
    not depend on ``jobs``; with ``target_cost`` set, restarts after the first
    one reaching it are discarded. The optimisation runs in standardised units
    and the returned factors satisfy ``mean(B) = 0``.
    """
    opts = opts or PartitionOptions()
    if d_a < 2 or d_b < 2:
        raise ValueError("d_a and d_b must be >= 2")
    if d_a * d_b != len(e):
        raise ValueError(f"d_a*d_b = {d_a * d_b} does not factor spectrum length {len(e)}")
    energies = e.energies
    mu = float(np.mean(energies))
    sd = float(np.std(energies))
    if not sd > 0:
        sd = 1.0
    e0 = (energies - mu) / sd
    tasks = [(e0, d_a, d_b, opts, r) for r in range(opts.restarts)]

    outcomes = []
    if jobs > 1 and opts.restarts > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(jobs, opts.restarts)) as pool:
            outcomes = list(pool.map(_run_restart, tasks))
    else:
        for task in tasks:
            out = _run_restart(task)
            outcomes.append(out)
            if _reached(out, opts, sd):
                break

    best = None
    costs: list[float] = []
    for out in outcomes:
        costs.append(math.inf if out is None else out[1] * sd * sd)
        if out is not None and (best is None or out[1] < best[1]):
            best = out
        if _reached(out, opts, sd):
            break
    if best is None:
        raise FloatingPointError("every restart produced a non-finite cost")

    x, _, trace, scheme = best
    a = x[:d_a] * sd + mu
    b = x[d_a:] * sd
    shift = float(np.mean(b))
    a, b = a + shift, b - shift
    return _finish(e, a, b, [(i, c * sd * sd) for i, c in trace], len(costs), costs, scheme)


def _reached(out, opts: PartitionOptions, sd: float) -> bool:
    return out is not None and opts.target_cost is not None and out[1] * sd * sd <= opts.target_cost


def evaluate_partition(e: Spectrum, a: Sequence[float], b: Sequence[float]) -> PartitionResult:
    """Score given factors ``a, b`` against ``e`` without optimising."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size * b.size != len(e):
        raise ValueError(f"|a|*|b| = {a.size * b.size} != |E| = {len(e)}")
    res = _finish(e, a, b, [], 0, [], "given")
    res.trace = [(0, res.cost)]
    return res


def cost_implied_l1_bound(cost: float, bin_width: float) -> float:
    """Expected histogram L1 shift from level residuals of mean square ``cost``.

    A level moved by ``|eps|`` changes bin with probability about
    ``|eps| / bin_width`` and then moves mass ``2 / D``; averaging and the
    Cauchy-Schwarz bound ``mean|eps| <= sqrt(cost)`` give ``2 sqrt(cost) / w``.
    """
    return 2.0 * math.sqrt(max(cost, 0.0)) / bin_width


def _finish(e, a, b, trace, used, costs, init_used) -> PartitionResult:
    energies = e.energies
    a, b = np.sort(a), np.sort(b)
    r, order = _residuals(energies, a, b)
    cost = float(np.mean(r * r))
    eps = energies - outer_sum(a, b)[order]
    return PartitionResult(
        a=Spectrum.from_values(a, source="partition-a"),
        b=Spectrum.from_values(b, source="partition-b"),
        cost=cost,
        p1=np.arange(energies.size),
        p2=order,
        epsilon=eps,
        h_int_norm=float(np.max(np.abs(eps))),
        trace=trace,
        restarts_used=used,
        restart_costs=costs,
        init_used=init_used,
    )


def spectral_norm_error(e: Spectrum, result: PartitionResult) -> float:
    """``log2(max |E - sorted(A (+) B)| / max |E|)``, floored at -52."""
    energies = e.energies
    approx = result.partitioned_energies
    if approx.size != energies.size:
        raise ValueError("dimension mismatch")
    num = float(np.max(np.abs(energies - approx)))
    den = float(np.max(np.abs(energies)))
    if den == 0.0 or num <= den * 2.0**SPECTRAL_NORM_FLOOR:
        return SPECTRAL_NORM_FLOOR
    return max(SPECTRAL_NORM_FLOOR, math.log2(num / den))


def assemble_partitioned_diagonal(e: Spectrum, result: PartitionResult) -> np.ndarray:
    """Diagonal of ``H'`` in the product basis, flattened row-major over ``(i, j)``.

    Entry ``(i, j)`` holds the eigenvalue of ``E`` whose sorted position is that
    of ``A_i + B_j`` in the sorted outer sum.
    """
    s = outer_sum(result.a.energies, result.b.energies)
    if s.size != len(e):
        raise ValueError("dimension mismatch")
    order = np.argsort(s, kind="stable")
    diag = np.empty_like(s)
    diag[order] = e.energies
    return diag


@dataclass
class PartitionNode:
    spectrum: Spectrum
    depth: int
    result: Optional[PartitionResult] = None
    spectral_norm: Optional[float] = None
    children: list["PartitionNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return self.result is None

    def max_depth(self) -> int:
        if not self.children:
            return self.depth
        return max(c.max_depth() for c in self.children)

    def iter_nodes(self):
        yield self
        for c in self.children:
            yield from c.iter_nodes()

    def level_summary(self) -> list[dict]:
        """Per-depth worst cost and spectral-norm error of the splits made there."""
        rows: dict[int, dict] = {}
        for node in self.iter_nodes():
            if node.result is None:
                continue
            row = rows.setdefault(node.depth, {"depth": node.depth, "splits": 0, "max_cost": 0.0, "max_spectral_norm": -math.inf})
            row["splits"] += 1
            row["max_cost"] = max(row["max_cost"], node.result.cost)
            row["max_spectral_norm"] = max(row["max_spectral_norm"], node.spectral_norm)
        return [rows[k] for k in sorted(rows)]

    def to_json_dict(self) -> dict:
        out = {"depth": self.depth, "length": len(self.spectrum)}
        if self.result is None:
            out["energies"] = self.spectrum.energies.tolist()
        else:
            out["partition"] = self.result.to_json_dict(self.spectrum)
            out["children"] = [c.to_json_dict() for c in self.children]
        return out


def recursive_partition(
    e: Spectrum, max_depth: int, opts: Optional[PartitionOptions] = None, leaf_length: int = 4
) -> PartitionNode:
    """Split ``e`` into two equal factors, then split each factor, and so on.

    Recursion stops at spectra of length ``leaf_length`` or at ``max_depth``
    levels of splitting. Each split uses ``opts`` with a seed offset by its
    position in the tree for reproducibility.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    opts = opts or PartitionOptions()
    n = len(e)
    root_dim = math.isqrt(n)
    if n <= leaf_length or root_dim * root_dim != n:
        raise ValueError(f"spectrum length {n} is not a square above the leaf size {leaf_length}")

    counter = [0]

    def build(spec: Spectrum, depth: int) -> PartitionNode:
        node = PartitionNode(spec, depth)
        length = len(spec)
        d = math.isqrt(length)
        if depth >= max_depth or length <= leaf_length or d * d != length:
            return node
        counter[0] += 1
        local = replace(opts, seed=int(opts.seed) * 1009 + counter[0])
        res = minimize_partition(spec, d, d, local)
        node.result = res
        node.spectral_norm = spectral_norm_error(spec, res)
        node.children = [build(res.a, depth + 1), build(res.b, depth + 1)]
        return node

    return build(e, 0)


def _goe_job(args):
    from .spectra import sample_goe

    n, realization, seed, opts = args
    spec = sample_goe(n, seed * 100_003 + n * 1_009 + realization)
    d = 2 ** (n // 2)
    local = replace(opts, seed=spec.seed)
    res = minimize_partition(spec, d, spec.dimension // d, local)
    return n, realization, spec.seed, spectral_norm_error(spec, res), res.cost


def goe_spectral_norm_sweep(
    qubits: Sequence[int], realizations: int, seed: int = 0, opts: Optional[PartitionOptions] = None, jobs: int = 1
) -> list[tuple[int, int, int, float, float]]:
    """Spectral-norm error of the best equal bipartition for GOE spectra.

    Returns rows ``(n_qubits, realization, spectrum_seed, log2_error, cost)``
    in a fixed order whatever ``jobs`` is.
    """
    opts = opts or PartitionOptions(restarts=1)
    for n in qubits:
        if n < 2 or n % 2:
            raise ValueError("qubit counts must be even and >= 2 for equal bipartitions")
    tasks = [(n, k, seed, opts) for n in qubits for k in range(realizations)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_goe_job, tasks))
    return [_goe_job(t) for t in tasks]
