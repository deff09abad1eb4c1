"""Command-line interface: generate spectra, count subsystems, and search for tensor factorizations.

Every command writes its results atomically (temporary file, then rename) and
records a run manifest: embedded under ``"manifest"`` in JSON outputs and as
a ``<output>.manifest.json`` sidecar next to CSV outputs.

Exit codes: 0 success, 1 usage error, 2 bad input, 3 numerical failure.
Relative paths resolve against ``$MEREOLOGY_DATA_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .dynamics import (
    early_window,
    entropy_growth_experiment,
    interaction_norm,
    random_arrangement,
)
from .moments import (
    count_subsystems,
    delta_sweep,
    deltas_to_csv,
    loglog_slope,
    standardized_moments,
)
from .partition import (
    INIT_SCHEMES,
    PartitionOptions,
    assemble_partitioned_diagonal,
    goe_spectral_norm_sweep,
    minimize_partition,
    recursive_partition,
    spectral_norm_error,
)
from .pauli import MODELS, ModelSpec, build_model
from .spectra import SCHEMA_VERSION, Spectrum, diagonalize, free_spectrum, sample_goe
from .thermo import count_from_thermo, default_temperature_grid, forward_thermo, reconstruct_dos, thermo_moments

DATA_DIR_ENV = "MEREOLOGY_DATA_DIR"
EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL = 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- file plumbing -----------------------------------------------------------


def _resolve(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _digest(path: Path) -> str:
    return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(args, inputs: Sequence[Path] = ()) -> dict:
    params = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in {"func", "config", "command"} and v is not None
    }
    return {
        "command": args.command,
        "parameters": json.loads(json.dumps(params, default=str)),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "input_digest": {str(p): _digest(p) for p in inputs},
    }


def _dump_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit_json(args, data: dict, inputs: Sequence[Path] = ()) -> None:
    data = dict(data)
    data["manifest"] = _manifest(args, inputs)
    text = _dump_json(data)
    out = getattr(args, "output", None)
    if out:
        _atomic_write(_resolve(out), text)
    else:
        sys.stdout.write(text)


def _emit_csv(args, text: str, path: Optional[str], inputs: Sequence[Path] = ()) -> None:
    if not path:
        sys.stdout.write(text)
        return
    p = _resolve(path)
    _atomic_write(p, text)
    _atomic_write(p.with_name(p.name + ".manifest.json"), _dump_json(_manifest(args, inputs)))


def _load_spectrum(path: str) -> tuple[Spectrum, Path]:
    p = _resolve(path)
    try:
        return Spectrum.load(p), p
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {p}: file not found") from exc
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed spectrum file {p}: {exc}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _json_object(text: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return value


def _split_dims(n: int, d_a: Optional[int], d_b: Optional[int]) -> tuple[int, int]:
    if d_a is None and d_b is None:
        root = math.isqrt(n)
        if root * root != n:
            raise UsageError(f"spectrum length {n} is not a square; pass --da/--db")
        return root, root
    if d_a is None:
        d_a = n // d_b
    if d_b is None:
        d_b = n // d_a
    return d_a, d_b


# -- commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    sources = [args.goe, args.model is not None, args.free is not None]
    if sum(sources) != 1:
        raise UsageError("choose exactly one of --goe, --model, --free")
    if args.goe:
        if args.qubits is None:
            raise UsageError("--goe needs --qubits")
        spec = sample_goe(args.qubits, args.seed, max_qubits=args.max_qubits)
    elif args.model is not None:
        if args.length is None:
            raise UsageError("--model needs --length")
        model = ModelSpec(args.model, args.length, args.couplings or {}, args.boundary)
        if args.length > args.max_qubits:
            raise UsageError(f"length {args.length} exceeds the dense cap {args.max_qubits}")
        spec = diagonalize(build_model(model), max_sites=args.max_qubits, source=model.model)
    else:
        spec = free_spectrum(args.free)
    if args.format == "json":
        _emit_json(args, {"spectrum": spec.to_json_dict()})
    else:
        _emit_csv(args, spec.to_csv(), args.output)
    return 0


def cmd_moments(args) -> int:
    if args.sweep:
        rows = delta_sweep(args.models, args.lengths, args.ks, boundary=args.boundary)
        slopes = {}
        for model in sorted({r.model for r in rows}):
            for k in args.ks:
                sel = [r for r in rows if r.model == model and r.k == k]
                if len(sel) >= 2 and all(r.delta > 0 for r in sel):
                    slopes[f"{model}:{k}"] = loglog_slope([r.L for r in sel], [r.delta for r in sel])
        _emit_csv(args, deltas_to_csv(rows), args.csv)
        report = {"schema_version": SCHEMA_VERSION, "slopes": slopes, "lengths": list(args.lengths)}
        if args.csv:
            _emit_json(args, report)
        else:
            sys.stderr.write(_dump_json(report))
        return 0
    if not args.input:
        raise UsageError("moments needs an input spectrum or --sweep")
    spec, path = _load_spectrum(args.input)
    report = standardized_moments(spec, k_max=args.k_max, floor=args.floor, sample=args.sample)
    _emit_json(args, report.to_json_dict(), [path])
    return 0


def cmd_count(args) -> int:
    spec, path = _load_spectrum(args.input)
    count = count_subsystems(spec, floor=args.floor, sample=args.sample)
    _emit_json(args, {"schema_version": SCHEMA_VERSION, **count.to_json_dict()}, [path])
    return 0


def _options(args) -> PartitionOptions:
    return PartitionOptions(
        restarts=args.restarts,
        max_iterations=args.max_iterations,
        gradient_tolerance=args.gradient_tolerance,
        seed=args.seed,
        init_scheme=args.init_scheme,
        target_cost=args.target_cost,
    )


def cmd_partition(args) -> int:
    opts = _options(args)
    if args.goe_sweep:
        rows = goe_spectral_norm_sweep(args.goe_sweep, args.realizations, args.seed, opts, jobs=args.jobs)
        means = {}
        for n in args.goe_sweep:
            means[str(n)] = float(np.mean([r[3] for r in rows if r[0] == n]))
        data = {
            "schema_version": SCHEMA_VERSION,
            "mean_log2_error": means,
            "rows": [
                {"n_qubits": n, "realization": k, "spectrum_seed": s, "log2_error": err, "cost": c}
                for n, k, s, err, c in rows
            ],
        }
        _emit_json(args, data)
        return 0
    if not args.input:
        raise UsageError("partition needs an input spectrum or --goe-sweep")
    spec, path = _load_spectrum(args.input)
    d_a, d_b = _split_dims(len(spec), args.da, args.db)
    result = minimize_partition(spec, d_a, d_b, opts, jobs=args.jobs)
    _emit_json(args, result.to_json_dict(spec), [path])
    return 0


def cmd_recurse(args) -> int:
    spec, path = _load_spectrum(args.input)
    tree = recursive_partition(spec, args.max_depth, _options(args))
    data = {"schema_version": SCHEMA_VERSION, "levels": tree.level_summary(), "tree": tree.to_json_dict()}
    _emit_json(args, data, [path])
    return 0


def cmd_entangle(args) -> int:
    spec, path = _load_spectrum(args.input)
    d_a, d_b = _split_dims(len(spec), args.da, args.db)
    result = minimize_partition(spec, d_a, d_b, _options(args), jobs=args.jobs)
    diag_p = assemble_partitioned_diagonal(spec, result)
    diag_q = random_arrangement(diag_p, [args.seed, 1])
    h_int = result.h_int_norm
    lo, hi = args.window
    times = np.geomspace(lo, hi, args.n_times) / h_int
    curves = entropy_growth_experiment(diag_p, diag_q, d_a, d_b, times, args.n_states, args.seed, h_int)
    mask = early_window(times, h_int, hi)
    mean_p, mean_q = curves.window_means(mask)
    below = bool(np.all(curves.s_partitioned[mask] < curves.reference[mask]))
    summary = {
        "schema_version": SCHEMA_VERSION,
        "cost": result.cost,
        "h_int_norm": h_int,
        "arbitrary_interaction_norm": interaction_norm(diag_q, d_a, d_b),
        "window": [lo / h_int, hi / h_int],
        "mean_entropy_partitioned": mean_p,
        "mean_entropy_arbitrary": mean_q,
        "ratio": mean_q / mean_p if mean_p > 0 else None,
        "below_reference": below,
    }
    _emit_csv(args, curves.to_csv(), args.output, [path])
    text = _dump_json({**summary, "manifest": _manifest(args, [path])})
    if args.summary:
        _atomic_write(_resolve(args.summary), text)
    else:
        (sys.stderr if not args.output else sys.stdout).write(text)
    return 0


def cmd_thermo(args) -> int:
    spec, path = _load_spectrum(args.input)
    grid = default_temperature_grid(spec, n=args.n_temps, lo=args.t_min, hi=args.t_max)
    curve = forward_thermo(spec, grid)
    count = count_from_thermo(curve, method=args.method)
    mu = thermo_moments(curve, method=args.method)
    _emit_csv(args, curve.to_csv(), args.output, [path])
    if args.dos_output:
        _emit_csv(args, reconstruct_dos(curve).to_csv(), args.dos_output, [path])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "method": args.method,
        "mu3": mu[3],
        "mu4": mu[4],
        **count.to_json_dict(),
        "manifest": _manifest(args, [path]),
    }
    text = _dump_json(summary)
    if args.summary:
        _atomic_write(_resolve(args.summary), text)
    else:
        (sys.stderr if not args.output else sys.stdout).write(text)
    return 0


# -- parser ------------------------------------------------------------------


def _add_output(p, help_text="output file (stdout when omitted)"):
    p.add_argument("-o", "--output", help=help_text)


def _add_partition_flags(p):
    p.add_argument("--da", type=int, help="dimension of factor A (default sqrt(D))")
    p.add_argument("--db", type=int, help="dimension of factor B (default D/da)")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--gradient-tolerance", type=float, default=1e-12)
    p.add_argument("--init-scheme", choices=INIT_SCHEMES, default="random-gaussian")
    p.add_argument("--target-cost", type=float, help="stop restarting once a restart reaches this cost")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for restarts and sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mereology", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file whose keys set default flag values")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a spectrum (GOE, spin chain, or free model)")
    g.add_argument("--goe", action="store_true", help="GOE random matrix spectrum")
    g.add_argument("--qubits", type=int)
    g.add_argument("--model", help=f"one of {', '.join(MODELS)}")
    g.add_argument("--length", type=int)
    g.add_argument("--couplings", type=_json_object, help='JSON object, e.g. \'{"J": 1, "h": 0.5}\'')
    g.add_argument("--boundary", choices=("open", "periodic"), default="open")
    g.add_argument("--free", type=_float_list, help="comma-separated single-site Z couplings")
    g.add_argument("--max-qubits", type=int, default=14)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--seed", type=int, default=0)
    _add_output(g)
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("moments", help="standardized moments and Gaussian deviations")
    m.add_argument("input", nargs="?")
    m.add_argument("--k-max", type=int, default=6)
    m.add_argument("--floor", type=float, default=1e-6)
    m.add_argument("--sample", action="store_true", help="energies are random draws; widen the Gaussian band")
    m.add_argument("--sweep", action="store_true", help="Delta_k versus chain length from string moments")
    m.add_argument("--models", type=lambda s: s.split(","), default=["ising", "xxx"])
    m.add_argument("--lengths", type=_int_list, default=[8, 16, 32, 64])
    m.add_argument("--ks", type=_int_list, default=[4])
    m.add_argument("--boundary", choices=("open", "periodic"), default="open")
    m.add_argument("--csv", help="sweep CSV output (stdout when omitted)")
    _add_output(m, "JSON report output (stdout when omitted)")
    m.set_defaults(func=cmd_moments)

    c = sub.add_parser("count", help="estimate the number of subsystems")
    c.add_argument("input")
    c.add_argument("--floor", type=float, default=1e-6)
    c.add_argument("--sample", action="store_true")
    _add_output(c)
    c.set_defaults(func=cmd_count)

    p = sub.add_parser("partition", help="best bipartition of a spectrum")
    p.add_argument("input", nargs="?")
    _add_partition_flags(p)
    p.add_argument("--goe-sweep", type=_int_list, help="qubit counts for a GOE spectral-norm sweep")
    p.add_argument("--realizations", type=int, default=20)
    _add_output(p)
    p.set_defaults(func=cmd_partition)

    r = sub.add_parser("recurse", help="recursive bipartition tree")
    r.add_argument("input")
    r.add_argument("--max-depth", type=int, default=2)
    _add_partition_flags(r)
    _add_output(r)
    r.set_defaults(func=cmd_recurse)

    e = sub.add_parser("entangle", help="entropy growth for partitioned vs arbitrary arrangement")
    e.add_argument("input")
    _add_partition_flags(e)
    e.add_argument("--n-states", type=int, default=10)
    e.add_argument("--n-times", type=int, default=41)
    e.add_argument("--window", type=_float_list, default=[0.1, 1.0], help="t*|H_int| range as lo,hi")
    e.add_argument("--summary", help="JSON summary output")
    _add_output(e, "growth-curve CSV output (stdout when omitted)")
    e.set_defaults(func=cmd_entangle)

    t = sub.add_parser("thermo", help="thermodynamic curve and subsystem count from it")
    t.add_argument("input")
    t.add_argument("--n-temps", type=int, default=200)
    t.add_argument("--t-min", type=float, default=0.05, help="lowest T in units of the energy spread")
    t.add_argument("--t-max", type=float, default=50.0, help="highest T in units of the energy spread")
    t.add_argument("--method", choices=("density", "cumulants"), default="density")
    t.add_argument("--dos-output", help="reconstructed density CSV")
    t.add_argument("--summary", help="JSON summary output")
    _add_output(t, "curve CSV output (stdout when omitted)")
    t.set_defaults(func=cmd_thermo)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        config = json.loads(_resolve(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(config, dict):
        raise InputError("config file must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    config = {k.replace("-", "_"): v for k, v in config.items()}
    unknown = sorted(set(config) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    subparser.set_defaults(**config)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:
        # argparse exits on bad flags and on --help/--version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        sys.stderr.write(f"mereology: usage error: {exc}\n")
        return EXIT_USAGE
    except InputError as exc:
        sys.stderr.write(f"mereology: input error: {exc}\n")
        return EXIT_INPUT
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        sys.stderr.write(f"mereology: numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except ValueError as exc:
        sys.stderr.write(f"mereology: input error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
