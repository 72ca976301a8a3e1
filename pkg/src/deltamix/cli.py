"""Command-line front end.

Subcommands: ``compress`` (delta dir -> container + report), ``reconstruct``
(container layer -> raw matrix file), ``verify`` (recompute errors, budget
compliance and container integrity), ``report`` (emit CSVs from a JSON-lines
run report). Data goes to stdout, diagnostics to stderr.

Exit codes: 0 success; 2 infeasible budget or bad invocation; 3 numerical
failure in strict mode; 4 missing layer / empty input; 5 integrity failure.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .calibration import (
    load_activations,
    load_matrix,
    parse_synth_spec,
    save_matrix,
    synth_activations,
)
from .container import pack, read_container, unpack, write_container
from .exceptions import (
    ConfigError,
    CorruptContainerError,
    DeltamixError,
    InfeasibleBudgetError,
    NumericalError,
    ShapeError,
    UnknownLayerError,
)
from .pipeline import (
    CompressionConfig,
    LayerJob,
    compress_model,
    outlier_column_mask,
)
from .report import EMITTERS, group_thirds, read_report, write_report

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_NOT_FOUND = 4
EXIT_INTEGRITY = 5


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_ratio(text: str) -> float:
    """Accept plain floats and fractions like ``1/16``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse ratio {text!r}") from exc


def _parse_bits(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"cannot parse bit list {text!r}") from exc


def _load_delta_dir(path_str: str) -> list[tuple[str, np.ndarray]]:
    path = Path(path_str)
    if not path.is_dir():
        raise FileNotFoundError(f"delta directory {path} does not exist")
    files = sorted(path.glob("*.calx"))
    if not files:
        raise FileNotFoundError(f"no *.calx matrices in {path}")
    return [(f.stem, load_matrix(f)) for f in files]


def _calibration_for(calib_arg: str, name: str, dim: int, seed: int) -> np.ndarray:
    if calib_arg.startswith("synth:"):
        kwargs = parse_synth_spec(calib_arg)
        return synth_activations(dim=dim, seed=seed, **kwargs)
    path = Path(calib_arg)
    if path.is_dir():
        f = path / f"{name}.calx"
        if not f.exists():
            raise FileNotFoundError(f"no calibration file {f} for layer {name!r}")
        return load_activations(f, expected_dim=dim)
    if not path.exists():
        raise FileNotFoundError(f"calibration file {path} does not exist")
    return load_activations(path, expected_dim=dim)


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, InfeasibleBudgetError):
        return EXIT_INFEASIBLE
    if isinstance(exc, CorruptContainerError):
        return EXIT_INTEGRITY
    if isinstance(exc, (UnknownLayerError, FileNotFoundError)):
        return EXIT_NOT_FOUND
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, ShapeError)):
        return EXIT_INFEASIBLE
    return EXIT_NUMERICAL


def _describe(exc: Exception) -> str:
    layer = getattr(exc, "layer", None)
    stage = getattr(exc, "stage", None)
    where = ""
    if layer or stage:
        where = f"[{layer or '?'}/{stage or '?'}] "
    return f"{where}{type(exc).__name__}: {exc}"


def cmd_compress(args) -> int:
    if args.alpha is not None and args.alpha <= 0:
        _log(
            "error: --alpha must be > 0; with bit 0 among the candidates any "
            "positive budget is feasible (minimal payload is 0 bits)"
        )
        return EXIT_INFEASIBLE
    config = CompressionConfig(
        candidates=_parse_bits(args.bits),
        alpha=args.alpha if args.gbit is None else None,
        g_bits=args.gbit,
        source_bits=args.source_bits,
        f_max=args.fmax,
        damp_rel=args.damp,
        eps_rel=args.eps,
        use_rtc=not args.no_rtc,
        seed=args.seed,
    )
    deltas = _load_delta_dir(args.delta)
    jobs = []
    for name, delta in deltas:
        x = _calibration_for(args.calib, name, delta.shape[1], args.seed)
        jobs.append(LayerJob(name=name, delta=delta, config=config, activations=x))
    run = compress_model(jobs, strict=not args.lenient)
    for name, stage, msg in run.failures:
        _log(f"warning: layer {name!r} failed at stage {stage}: {msg}")
    for res in run.results:
        if not any(res.scheme.assignment):
            _log(f"warning: layer {res.name!r} scheme is degenerate (all rows dropped)")
        _log(
            f"{res.name}: bits={list(res.scheme.active_bits)} "
            f"payload={res.payload_bits}b budget={res.budget_bits:g}b "
            f"err={res.error_end_to_end:.6g} rel={res.error_relative:.4f}"
        )
    if args.out:
        write_container(args.out, run.results)
        _log(f"wrote container: {args.out}")
    if args.report:
        write_report(args.report, run)
        _log(f"wrote report: {args.report}")
    if not run.results:
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    c = read_container(args.infile)
    dense = c.reconstruct(args.layer)
    save_matrix(args.out, dense, dtype="f64")
    _log(f"wrote {dense.shape[0]}x{dense.shape[1]} matrix: {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    with open(args.infile, "rb") as fh:
        raw = fh.read()
    c = unpack(raw)  # checksum + structure validated here
    if not c.records:
        _log("error: container holds no layers")
        return EXIT_NOT_FOUND
    if pack(c.records) != raw:
        _log("error: container does not re-encode to identical bytes")
        return EXIT_INTEGRITY

    deltas = dict(_load_delta_dir(args.delta))
    budget_violation = False
    rows = []
    per_layer_all: list[float] = []
    per_layer_out: list[float] = []
    for rec in c.records:
        if rec.name not in deltas:
            _log(f"error: no delta matrix for container layer {rec.name!r}")
            return EXIT_NOT_FOUND
        w = deltas[rec.name]
        if w.shape != (rec.h_out, rec.h_in):
            _log(f"error: delta {rec.name!r} is {w.shape}, container says "
                 f"({rec.h_out}, {rec.h_in})")
            return EXIT_INFEASIBLE
        x = _calibration_for(args.calib, rec.name, rec.h_in, args.seed)
        if args.gbit is not None:
            budget = args.gbit * rec.h_in * rec.h_out
        else:
            budget = args.alpha * args.source_bits * rec.h_in * rec.h_out
        diff = w - rec.reconstruct()
        dx = diff @ x
        all_mean = float(np.sum(dx * dx)) / x.shape[1]
        mask = outlier_column_mask(x)
        out_mean = float(np.sum(dx[:, mask] * dx[:, mask])) / int(np.sum(mask))
        ok = rec.payload_bits <= budget
        budget_violation |= not ok
        per_layer_all.append(all_mean)
        per_layer_out.append(out_mean)
        rows.append(
            f"layer,{rec.name},{all_mean:.17g},{out_mean:.17g},"
            f"{rec.payload_bits},{budget:g},{'ok' if ok else 'OVER_BUDGET'}"
        )

    print("kind,name,all_error,outlier_error,payload_bits,budget_bits,status")
    for row in rows:
        print(row)
    groups = group_thirds(c.layer_names)
    index = {name: i for i, name in enumerate(c.layer_names)}
    for gname, members in groups.items():
        if not members:
            continue
        idx = [index[m] for m in members]
        g_all = float(np.mean([per_layer_all[i] for i in idx]))
        g_out = float(np.mean([per_layer_out[i] for i in idx]))
        g_payload = sum(c.records[i].payload_bits for i in idx)
        print(f"group,{gname},{g_all:.17g},{g_out:.17g},{g_payload},,")
    return EXIT_INFEASIBLE if budget_violation else EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.infile)
    if not path.exists():
        _log(f"error: report {path} does not exist")
        return EXIT_NOT_FOUND
    records = read_report(path)
    if not any(r.get("type") == "layer" for r in records):
        _log("error: report holds no layer records")
        return EXIT_NOT_FOUND
    text = EMITTERS[args.emit](records)
    if args.out:
        Path(args.out).write_text(text)
        _log(f"wrote {args.emit}: {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltamix",
        description="Mixed-precision SVD compression of delta weight matrices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a directory of delta matrices")
    p.add_argument("--delta", required=True, help="directory of *.calx matrices")
    p.add_argument("--calib", required=True,
                   help="CALX file, directory of per-layer files, or synth:<dist>[(p)]:<n>")
    p.add_argument("--alpha", type=_parse_ratio, default=1.0 / 16.0,
                   help="compressed/original size ratio (accepts fractions, default 1/16)")
    p.add_argument("--gbit", type=float, default=None,
                   help="average payload bits per parameter (overrides --alpha)")
    p.add_argument("--bits", default="0,2,3,4,5,6,7,8",
                   help="candidate bit widths, comma separated")
    p.add_argument("--fmax", type=int, default=4,
                   help="max distinct bit widths per layer")
    p.add_argument("--source-bits", type=int, default=16, choices=(16, 32))
    p.add_argument("--damp", type=float, default=0.01, help="relative Hessian damping")
    p.add_argument("--eps", type=float, default=1e-8,
                   help="relative ridge for the left-factor correction")
    p.add_argument("--no-rtc", action="store_true",
                   help="skip the left-factor correction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="container output path")
    p.add_argument("--report", default=None, help="JSON-lines report output path")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="lenient", action="store_false", default=False,
                      help="abort the run on the first failing layer (default)")
    mode.add_argument("--lenient", dest="lenient", action="store_true",
                      help="record layer failures and continue")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("reconstruct", help="densify one layer from a container")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify", help="recompute errors and check integrity")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--delta", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--alpha", type=_parse_ratio, default=1.0 / 16.0)
    p.add_argument("--gbit", type=float, default=None)
    p.add_argument("--source-bits", type=int, default=16, choices=(16, 32))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="emit CSVs from a JSON-lines report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--emit", required=True, choices=sorted(EMITTERS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DeltamixError, FileNotFoundError) as exc:
        _log(f"error: {_describe(exc)}")
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
