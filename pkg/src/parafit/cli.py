"""Command-line application shell.

Subcommands build a model, bind a dataset, and run the requested operation
with exit codes 0 (success / converged fit), 1 (fit did not converge),
2 (usage error), 3 (data error). Result documents are JSON; event files are
CSV. A `serve` subcommand starts the HTTP service wrapping the same
operations for long-running, multi-client use.

Model defaults are deterministic constants (not data-derived), so any two
clients fitting the same file get bitwise-identical results.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

import numpy as np

from .core import UnbinnedDataSet, Variable
from .dataio import load_events_csv, write_events_csv
from .dalitz import dalitz_pdf, in_boundary_mask, load_dalitz_model
from .engine import Backend, NormalizationStore, nll, resolve_norms
from .errors import (
    AttemptsExhausted,
    DataError,
    EmptyDataSet,
    EnvelopeExceeded,
    OutOfRange,
    ParafitError,
    ShapeMismatch,
    UnknownObservable,
)
from .fitting import FitManager, FitResult, MinimizerOptions
from .mcgen import GenSpec, generate_1d, generate_dalitz
from .pdf import eval_batch, exponential, gaussian, normalize
from .sharding import sharded_nll

EXIT_OK = 0
EXIT_FIT_FAILED = 1
EXIT_USAGE = 2
EXIT_DATA = 3

CURVE_POINTS = 1000

_DATA_ERRORS = (
    DataError,
    OutOfRange,
    ShapeMismatch,
    UnknownObservable,
    EmptyDataSet,
    EnvelopeExceeded,
    AttemptsExhausted,
    OSError,
    KeyError,
    ValueError,
)

log = logging.getLogger("parafit.cli")


def _color_enabled(args) -> bool:
    if getattr(args, "no_color", False) or os.environ.get("NO_COLOR"):
        return False
    return sys.stderr.isatty()


def _paint(args, text: str, code: str) -> str:
    return f"\x1b[{code}m{text}\x1b[0m" if _color_enabled(args) else text


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}.get(min(verbosity, 2), logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(name)s: %(message)s")


def _add_common(p: argparse.ArgumentParser, data_required: bool = True) -> None:
    p.add_argument("--data", required=data_required, help="input event CSV")
    p.add_argument("--out", default=None, help="output path")
    p.add_argument("-j", "--threads", type=int, default=0,
                   help="evaluation pool size (0 = auto); implies the pool backend")
    p.add_argument("--workers", type=int, default=1,
                   help="shard count for the distributed evaluation path")
    p.add_argument("--backend", choices=["serial", "pool"], default="serial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0, dest="verbosity")
    p.add_argument("--timing", action="store_true", help="print a timing block to stderr")
    p.add_argument("--no-color", action="store_true")
    p.add_argument("--max-calls", type=int, default=None, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parafit",
        description="Parallel maximum-likelihood fitting of composable densities.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit-gaussian", help="fit a gaussian to one CSV column")
    _add_common(p)
    p.add_argument("--column", default=None, help="observable name (default: first header column)")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--dump-curve", default=None, help="write a (x, density) curve CSV")

    p = sub.add_parser("fit-exp", help="fit an exponential slope to one CSV column")
    _add_common(p)
    p.add_argument("--column", default=None)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=10.0)
    p.add_argument("--alpha-init", type=float, default=-1.0)
    p.add_argument("--dump-curve", default=None)

    p = sub.add_parser("fit-dalitz", help="fit a three-body amplitude model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model description JSON")
    p.add_argument("--grid", type=int, default=400, help="normalization grid nodes per axis")

    p = sub.add_parser("generate", help="generate toy events to CSV")
    _add_common(p, data_required=False)
    p.add_argument("--kind", choices=["gaussian", "exponential", "dalitz"], default="gaussian")
    p.add_argument("--events", type=int, required=True)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=-1.5)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--model", default=None, help="model JSON for dalitz generation")

    p = sub.add_parser("eval-nll", help="print the NLL of a model over a CSV dataset")
    _add_common(p)
    p.add_argument("--column", default=None)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("-v", "--verbose", action="count", default=0, dest="verbosity")

    return parser


def _backend_from(args) -> Backend:
    mode = args.backend
    workers = None
    if args.threads:
        mode = "pool"
        workers = args.threads
    return Backend(mode, workers=workers)


def _load_column(args, lo: float, hi: float) -> tuple[Variable, UnbinnedDataSet]:
    name = args.column
    if name is None:
        with open(args.data, "r", encoding="utf-8") as fh:
            for line in fh:
                stripped = line.strip()
                if stripped and not stripped.startswith("#"):
                    name = stripped.split(",")[0].strip()
                    break
        if name is None:
            raise DataError(f"{args.data!r} has no header line")
    obs = Variable.observable(name, lo, hi)
    return obs, load_events_csv(args.data, [obs])


def write_result(result: FitResult, path: str) -> None:
    """Serialize the result document; numbers keep shortest round-trip form."""
    doc = result.to_dict()
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, indent=2))
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write {path!r}: {exc}") from exc


def _dump_curve(pdf_node, obs: Variable, path: str) -> None:
    xs = np.linspace(obs.lower, obs.upper, CURVE_POINTS)
    norm = normalize(pdf_node).value
    dens = eval_batch(pdf_node, {obs.name: xs}) / norm
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{obs.name},density\n")
        for x, d in zip(xs, dens):
            fh.write(f"{float(x)!r},{float(d)!r}\n")


def _print_timing(args, blocks: list[tuple[str, float]]) -> None:
    if not args.timing:
        return
    total = sum(t for _, t in blocks)
    print(_paint(args, "timing:", "1"), file=sys.stderr)
    for label, t in blocks + [("total", total)]:
        print(f"  {label:<14} {t:9.3f} s", file=sys.stderr)


def _run_fit(args, pdf_node, obs_list, ds) -> int:
    backend = _backend_from(args)
    options = MinimizerOptions(max_calls=args.max_calls)
    manager = FitManager(pdf_node, ds, backend=backend, options=options)
    if args.workers > 1:
        free = manager.free_parameters()
        evaluate = lambda x: _sharded_objective(manager, free, x, args.workers)  # noqa: E731
        from .fitting import FcnHandle, minimize

        t0 = time.perf_counter()
        result = minimize(FcnHandle(evaluate), free, options)
        if result.status == "converged":
            for var, value in zip(free, result.values):
                var.value = float(value)
        result.all_parameters = tuple(
            (p.name, p.value, float(dict(zip(result.names, result.errors)).get(p.name, 0.0)), p.fixed)
            for p in manager.parameters
        )
        result.timing = {"total_s": time.perf_counter() - t0}
    else:
        result = manager.fit()

    out_path = args.out or "fit_result.json"
    write_result(result, out_path)
    if getattr(args, "dump_curve", None):
        _dump_curve(pdf_node, obs_list[0], args.dump_curve)
    print(out_path)
    timing = result.timing
    _print_timing(args, [
        ("data-load", getattr(args, "_t_load", 0.0)),
        ("normalization", timing.get("normalization_s", 0.0)),
        ("minimization", timing.get("minimization_s", timing.get("total_s", 0.0))),
    ])
    if args.verbosity:
        status = result.status
        marker = _paint(args, status, "32" if status == "converged" else "31")
        log.info("status %s, nll %.10g, %d calls", marker, result.nll_min, result.n_calls)
    return EXIT_OK if result.status == "converged" else EXIT_FIT_FAILED


def _sharded_objective(manager, free, x, workers):
    from .core import set_value, snapshot

    for var, value in zip(free, x):
        set_value(var, float(value))
    snap = snapshot(manager.parameters)
    return sharded_nll(manager.pdf, manager.data, snap, workers, manager.store)


def _cmd_fit_gaussian(args) -> int:
    t0 = time.perf_counter()
    obs, ds = _load_column(args, args.lo, args.hi)
    args._t_load = time.perf_counter() - t0
    span = args.hi - args.lo
    mu = Variable("mu", 0.5 * (args.lo + args.hi), args.lo, args.hi, step=span / 100.0)
    sigma = Variable("sigma", span / 10.0, span / 1000.0, span, step=span / 1000.0)
    node = gaussian(obs, mu, sigma)
    return _run_fit(args, node, [obs], ds)


def _cmd_fit_exp(args) -> int:
    t0 = time.perf_counter()
    obs, ds = _load_column(args, args.lo, args.hi)
    args._t_load = time.perf_counter() - t0
    alpha = Variable("alpha", args.alpha_init, -20.0, 20.0, step=0.01)
    node = exponential(obs, alpha)
    return _run_fit(args, node, [obs], ds)


def _cmd_fit_dalitz(args) -> int:
    t0 = time.perf_counter()
    ch, terms = load_dalitz_model(args.model)
    node = dalitz_pdf(terms, ch, grid=(args.grid, args.grid))
    s12_obs, s13_obs = node.observables
    ds = load_events_csv(args.data, [s12_obs, s13_obs])
    inside = in_boundary_mask(ds.column(s12_obs.name), ds.column(s13_obs.name), ch)
    if not inside.all():
        bad = int(np.argmax(~inside))
        raise DataError(f"event {bad} lies outside the kinematic boundary")
    args._t_load = time.perf_counter() - t0
    return _run_fit(args, node, [s12_obs, s13_obs], ds)


def _cmd_generate(args) -> int:
    out_path = args.out or "events.csv"
    spec = GenSpec(n_events=args.events, seed=args.seed)
    if args.kind == "dalitz" or args.model:
        if not args.model:
            raise DataError("dalitz generation needs --model")
        ch, terms = load_dalitz_model(args.model)
        ds = generate_dalitz(terms, ch, spec)
    elif args.kind == "exponential":
        obs = Variable.observable("x", args.lo, args.hi)
        node = exponential(obs, Variable("alpha", args.alpha, fixed=True))
        ds = generate_1d(node, obs, spec)
    else:
        obs = Variable.observable("x", args.lo, args.hi)
        node = gaussian(
            obs,
            Variable("mu", args.mu, fixed=True),
            Variable("sigma", args.sigma, fixed=True),
        )
        ds = generate_1d(node, obs, spec)
    write_events_csv(ds, out_path)
    print(out_path)
    return EXIT_OK


def _cmd_eval_nll(args) -> int:
    t0 = time.perf_counter()
    obs, ds = _load_column(args, -math.inf, math.inf)
    t_load = time.perf_counter() - t0
    node = gaussian(
        obs,
        Variable("mu", args.mu, fixed=True),
        Variable("sigma", args.sigma, fixed=True),
    )
    t1 = time.perf_counter()
    store = NormalizationStore()
    resolve_norms(node, None, store)
    t_norm = time.perf_counter() - t1
    t2 = time.perf_counter()
    if args.workers > 1:
        value = sharded_nll(node, ds, None, args.workers, store)
    else:
        value = nll(node, ds, None, _backend_from(args), store)
    t_eval = time.perf_counter() - t2
    print(repr(value))
    _print_timing(args, [("data-load", t_load), ("normalization", t_norm), ("evaluation", t_eval)])
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "fit-gaussian": _cmd_fit_gaussian,
    "fit-exp": _cmd_fit_exp,
    "fit-dalitz": _cmd_fit_dalitz,
    "generate": _cmd_generate,
    "eval-nll": _cmd_eval_nll,
    "serve": _cmd_serve,
}


def run(args) -> int:
    """Execute a parsed configuration; returns the process exit code."""
    _configure_logging(getattr(args, "verbosity", 0))
    try:
        return _COMMANDS[args.subcommand](args)
    except _DATA_ERRORS as exc:
        print(_paint(args, f"error: {exc}", "31"), file=sys.stderr)
        return EXIT_DATA
    except ParafitError as exc:
        print(_paint(args, f"fit error: {exc}", "31"), file=sys.stderr)
        return EXIT_FIT_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
