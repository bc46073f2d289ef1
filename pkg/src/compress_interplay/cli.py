"""Command-line entry point: ``compress-interplay <command> [options]``.

Exit codes: 0 ok, 1 audit violation under ``--strict``, 2 I/O or file
format error, 3 bad arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, reports
from .audit import (
    DEFAULT_BIN_EDGES,
    Direction,
    audit_blocks_norms,
    audit_dot,
    collision_report,
    deviation_experiment,
    orthogonality_threshold,
    sample_dot_pairs,
)
from .compose import Order, parse_order
from .propagate import StackConfig, simulate_stack
from .quantize import get_preset, quantize_tensor
from .sparsify import TieMode, parse_pattern, sparsify
from .tensorcore import SeedSpec, Tensor, ValidationError
from .tnsr import TnsrFormatError, read_tnsr, write_tnsr

EXIT_OK, EXIT_VIOLATION, EXIT_IO, EXIT_ARGS = 0, 1, 2, 3
JOBS_ENV = "COMPRESS_INTERPLAY_JOBS"

# keys that only say where output goes; kept out of the hashed config
_OUTPUT_KEYS = {"output", "csv_out", "json_out", "out_dir", "config", "jobs", "command", "func"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _effective_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _OUTPUT_KEYS}


def _preset(name, block_size):
    try:
        return get_preset(name, block_size)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _pattern(text, tie_mode="KEEP_EARLIER"):
    return parse_pattern(text, TieMode(tie_mode))


def _orders(text) -> list[Order]:
    if str(text).lower() == "both":
        return [Order.S_THEN_Q, Order.Q_THEN_S]
    return [parse_order(text)]


def _int_list(text) -> list[int]:
    """'0-9' or '0,2,5' (ranges inclusive)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _float_list(text) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _load_input(path) -> tuple[np.ndarray, int]:
    arr, code = read_tnsr(path)
    if not np.all(np.isfinite(arr)):
        raise TnsrFormatError("payload", "tensor contains NaN or Inf")
    return arr, code


def _error_stats(err: np.ndarray) -> dict:
    a = np.abs(err).reshape(-1)
    return {
        "max_abs_error": float(a.max()) if a.size else 0.0,
        "mean_abs_error": float(a.mean()) if a.size else 0.0,
        "l1_error": float(a.sum()),
        "l2_error": float(np.sqrt(np.square(a).sum())),
    }


def _stats_line(stats: dict) -> str:
    return " ".join(f"{k}={stats[k]!r}" for k in sorted(stats))


def _maybe_json(args, command, result):
    if getattr(args, "json_out", None):
        reports.write_json(args.json_out, reports.envelope(command, _effective_config(args), result))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_quantize(args) -> int:
    f = _preset(args.preset, args.block_size)
    arr, code = _load_input(args.input)
    q = quantize_tensor(arr, f)
    stats = _error_stats(arr - q)
    write_tnsr(args.output, q, code)
    _maybe_json(args, "quantize", stats)
    print(_stats_line(stats))
    return EXIT_OK


def cmd_sparsify(args) -> int:
    pat = _pattern(args.pattern, args.tie_mode)
    arr, code = _load_input(args.input)
    out, keep = sparsify(arr.reshape(-1), pat)
    stats = _error_stats(arr.reshape(-1) - out)
    stats["kept_fraction"] = float(keep.mean())
    write_tnsr(args.output, out.reshape(arr.shape), code)
    _maybe_json(args, "sparsify", stats)
    print(_stats_line(stats))
    return EXIT_OK


def _blocks_from_args(args) -> np.ndarray:
    if args.input:
        arr, _ = _load_input(args.input)
        return Tensor.from_array(arr, block_size=args.block_size).block_matrix()
    if args.synthetic_blocks:
        seed = SeedSpec(args.seed)
        return seed.generator().standard_normal((args.synthetic_blocks, args.block_size))
    raise UsageError("give --input or --synthetic-blocks")


def cmd_audit_tensor(args) -> int:
    f = _preset(args.preset, args.block_size)
    pat = _pattern(args.pattern, args.tie_mode)
    blocks = _blocks_from_args(args)
    audit = audit_blocks_norms(blocks, f, pat, (args.p,))[float(args.p)]
    summary = audit.summary()
    if args.csv_out:
        reports.write_csv(args.csv_out, audit.CSV_HEADER, audit.rows())
    _maybe_json(args, "audit-tensor", summary)
    print(json.dumps(reports._clean(summary["violations"]), sort_keys=True))
    if args.strict and any(summary["violations"].values()):
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_audit_dot(args) -> int:
    f = _preset(args.preset, args.block_size)
    pat = _pattern(args.pattern, args.tie_mode)
    x, w = _float_list(args.x), _float_list(args.w)
    if len(x) != len(w) or not x:
        raise UsageError("--x and --w must be non-empty and of equal length")
    result = {o.value: audit_dot(x, w, f, pat, o).to_dict() for o in _orders(args.order)}
    _maybe_json(args, "audit-dot", result)
    print(reports.dumps(result), end="")
    return EXIT_OK


def _bin_edges(text):
    if text is None:
        return DEFAULT_BIN_EDGES
    vals = _float_list(text)
    if len(vals) == 1:
        # a single number is a bin count over [1, 10]
        return tuple(np.linspace(1.0, 10.0, int(vals[0]) + 1))
    if len(vals) < 2 or any(b <= a for a, b in zip(vals, vals[1:])):
        raise UsageError("--bins must be a count or increasing edges")
    return tuple(vals)


DEVIATION_CSV_HEADER = (
    "sample_index",
    "order",
    "eps_total",
    "eps_s_dot",
    "eps_q_dot",
    "eps_t",
    "eps_i",
    "deviation",
)


def _deviation_run(count, n, f, pat, orders, seed, edges):
    results = {o: deviation_experiment(count, n, f, pat, o, SeedSpec(seed), edges) for o in orders}
    rows = []
    for o, res in results.items():
        a = res.audits
        for i in range(len(a)):
            rows.append(
                (
                    i,
                    o.value,
                    float(a.eps_total[i]),
                    float(a.eps_s_dot[i]),
                    float(a.eps_q_dot[i]),
                    float(a.eps_t[i]),
                    float(a.eps_i[i]),
                    float(a.deviation[i]),
                )
            )
    return {o.value: r.summary() for o, r in results.items()}, rows


def cmd_deviation(args) -> int:
    f = _preset(args.preset, args.n)
    pat = _pattern(args.pattern, args.tie_mode)
    summary, rows = _deviation_run(
        args.count, args.n, f, pat, _orders(args.order), args.seed, _bin_edges(args.bins)
    )
    if args.csv_out:
        reports.write_csv(args.csv_out, DEVIATION_CSV_HEADER, rows)
    _maybe_json(args, "deviation", summary)
    for order, s in summary.items():
        print(
            f"{order}: min_deviation={s['min_deviation']!r} "
            f"fraction_below_2={s['fraction_below_2']!r} "
            f"low_deviation_count={s['low_deviation_count']} "
            f"mean_eps_t_share={s['mean_term_shares']['eps_t']!r}"
        )
    return EXIT_OK


def _parse_shape(text) -> tuple[int, ...]:
    try:
        shape = tuple(int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"bad --synthetic shape {text!r}; use e.g. 2048x2048") from None
    if not shape or any(s < 1 for s in shape):
        raise UsageError("synthetic shape must be positive")
    return shape


def cmd_collide(args) -> int:
    f = _preset(args.preset, args.block_size)
    if args.input:
        arr, _ = _load_input(args.input)
    elif args.synthetic:
        arr = SeedSpec(args.seed).generator().standard_normal(_parse_shape(args.synthetic))
    else:
        raise UsageError("give --input or --synthetic")
    rep = collision_report(Tensor.from_array(arr, block_size=args.block_size), f)
    summary = rep.summary()
    if args.csv_out:
        reports.write_csv(
            args.csv_out,
            ("block_index", "reduction"),
            ((i, int(r)) for i, r in enumerate(rep.per_block_reduction)),
        )
    _maybe_json(args, "collide", summary)
    print(_stats_line(summary))
    return EXIT_OK


def _compress_layers(text, depth):
    t = str(text).strip().lower()
    if t == "all":
        return None
    if t == "none":
        return frozenset()
    return frozenset(_int_list(t))


def cmd_propagate(args) -> int:
    f = None if args.preset.lower() == "none" else _preset(args.preset, args.block_size)
    pat = None if args.pattern.lower() == "none" else _pattern(args.pattern, args.tie_mode)
    seeds = _int_list(args.seeds)
    layers = _compress_layers(args.compress_layers, args.depth)
    rows, agg = [], {}
    for order in _orders(args.order):
        traces = []
        for s in seeds:
            cfg = StackConfig(
                depth=args.depth,
                width=args.width,
                activation=args.activation.upper(),
                weight_std=args.weight_std,
                input_batch=args.batch,
                format=f,
                pattern=pat,
                order=order,
                compress_layers=layers,
                seed=SeedSpec(s),
            )
            tr = simulate_stack(cfg)
            traces.append(tr.rel_l2_error)
            rows.extend(tr.rows())
        t = np.array(traces)
        agg[order.value] = {
            "mean_per_layer": t.mean(axis=0).tolist(),
            "std_per_layer": t.std(axis=0).tolist(),
            "mean_final_layer": float(t[:, -1].mean()),
        }
    if args.csv_out:
        reports.write_csv(args.csv_out, ("layer_index", "rel_l2_error", "order", "seed"), rows)
    _maybe_json(args, "propagate", agg)
    for order, a in agg.items():
        print(f"{order}: mean_final_layer={a['mean_final_layer']!r}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    rep = orthogonality_threshold(
        args.em_base,
        args.em_q,
        args.em_s,
        Direction.LOWER_IS_BETTER if args.direction == "lower" else Direction.HIGHER_IS_BETTER,
        args.em_combined,
    )
    _maybe_json(args, "threshold", rep.to_dict())
    line = f"threshold={rep.threshold:.6g} err_q={rep.err_q:.6g} err_s={rep.err_s:.6g}"
    if rep.verdict is not None:
        line += f" combined={rep.em_combined:.6g} {rep.verdict}"
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _run_cell(cell: dict, out_dir: str) -> dict:
    f = get_preset(cell["preset"], cell["n"])
    pat = parse_pattern(cell["pattern"])
    order = parse_order(cell["order"])
    dev = deviation_experiment(cell["count"], cell["n"], f, pat, order, SeedSpec(cell["seed"]))
    _, w = sample_dot_pairs(cell["count"], cell["n"], SeedSpec(cell["seed"]))
    audit = audit_blocks_norms(w, f, pat, (1.0,))[1.0]
    result = {"deviation": dev.summary(), "weight_audit": audit.summary()}
    report = reports.envelope("sweep-cell", cell, result)
    name = f"cell_{cell['index']:04d}.json"
    data = reports.dumps(report).encode()
    reports.atomic_write_bytes(Path(out_dir) / name, data)
    return {
        "index": cell["index"],
        "config": cell,
        "config_hash": report["config_hash"],
        "report": name,
        "report_sha256": hashlib.sha256(data).hexdigest(),
    }


def _split(text):
    return [v.strip() for v in str(text).split(",") if v.strip()] if text else []


def cmd_sweep(args) -> int:
    grid = {
        "presets": _split(args.presets),
        "patterns": _split(args.patterns),
        "orders": _split(args.orders),
        "seeds": _int_list(args.seeds) if args.seeds else [],
    }
    if args.grid:
        try:
            with open(args.grid) as fh:
                grid.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            return _fail(EXIT_IO, f"cannot read grid file: {exc}")
    for name in grid["presets"]:
        _preset(name, args.n)
    for p in grid["patterns"]:
        parse_pattern(p)
    orders = [parse_order(o).value for o in grid["orders"]]

    cells = []
    for preset in grid["presets"]:
        for pattern in grid["patterns"]:
            for order in orders:
                for seed in grid["seeds"]:
                    cells.append(
                        {
                            "index": len(cells),
                            "preset": preset,
                            "pattern": pattern,
                            "order": order,
                            "seed": int(seed),
                            "count": args.count,
                            "n": args.n,
                        }
                    )
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    if args.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(_run_cell, cells, [args.out_dir] * len(cells)))
    else:
        entries = [_run_cell(c, args.out_dir) for c in cells]
    entries.sort(key=lambda e: e["index"])
    manifest = {
        "library_version": __version__,
        "grid": grid,
        "grid_hash": reports.config_hash({"grid": grid, "count": args.count, "n": args.n}),
        "cells": entries,
    }
    reports.write_json(Path(args.out_dir) / "manifest.json", manifest)
    print(f"wrote {len(entries)} cell reports to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _jobs_default() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags override it)")

    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--preset", default="HBFP6-appendix")
    fmt.add_argument("--block-size", type=int, default=64)

    spar = argparse.ArgumentParser(add_help=False)
    spar.add_argument("--pattern", default="2:4", help="'N:M' or 'p%%'")
    spar.add_argument("--tie-mode", default="KEEP_EARLIER", choices=[t.value for t in TieMode])

    parser = _Parser(prog="compress-interplay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, func, parents, help_):
        p = sub.add_parser(name, parents=[common, *parents], help=help_)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("quantize", cmd_quantize, [fmt], "quantize a TNSR tensor block-wise")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--json-out")

    p = add("sparsify", cmd_sparsify, [spar], "prune a TNSR tensor by magnitude")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--json-out")

    p = add("audit-tensor", cmd_audit_tensor, [fmt, spar], "per-block ordering theorem audit")
    p.add_argument("--input")
    p.add_argument("--synthetic-blocks", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--csv-out")
    p.add_argument("--json-out")
    p.add_argument("--strict", action="store_true", help="exit 1 on any violation")

    p = add("audit-dot", cmd_audit_dot, [fmt, spar], "dot-product error decomposition")
    p.add_argument("--x", required=True, help="comma-separated activations")
    p.add_argument("--w", required=True, help="comma-separated weights")
    p.add_argument("--order", default="both")
    p.add_argument("--json-out")

    p = add("deviation", cmd_deviation, [spar], "deviation experiment on random blocks")
    p.add_argument("--preset", default="HBFP6-appendix")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--order", default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", help="bin count over [1, 10] or comma-separated edges")
    p.add_argument("--csv-out")
    p.add_argument("--json-out")

    p = add("collide", cmd_collide, [fmt], "unique-value reduction from quantization")
    p.add_argument("--input")
    p.add_argument("--synthetic", help="Gaussian tensor shape, e.g. 2048x2048")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv-out")
    p.add_argument("--json-out")

    p = add("propagate", cmd_propagate, [fmt, spar], "error propagation through a layer stack")
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--activation", default="identity", choices=["identity", "relu"])
    p.add_argument("--weight-std", type=float, default=None)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--order", default="both")
    p.add_argument("--seeds", default="0-9")
    p.add_argument("--compress-layers", default="all", help="'all', 'none' or e.g. '3' / '0,2-4'")
    p.add_argument("--csv-out")
    p.add_argument("--json-out")

    p = add("threshold", cmd_threshold, [], "orthogonality threshold from measured metrics")
    p.add_argument("--em-base", type=float, required=True)
    p.add_argument("--em-q", type=float, required=True)
    p.add_argument("--em-s", type=float, required=True)
    p.add_argument("--em-combined", type=float)
    p.add_argument("--direction", default="lower", choices=["lower", "higher"])
    p.add_argument("--json-out")

    p = add("sweep", cmd_sweep, [], "run a presets x patterns x orders x seeds grid")
    p.add_argument("--presets", default="")
    p.add_argument("--patterns", default="")
    p.add_argument("--orders", default="")
    p.add_argument("--seeds", default="")
    p.add_argument("--grid", help="JSON file with presets/patterns/orders/seeds lists")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=_jobs_default())

    return parser, subs


def _apply_config(parser, subs, argv):
    """Re-parse with config-file values installed as subcommand defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise TnsrFormatError("config", str(exc)) from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known = set(vars(args))
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    subs[args.command].set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser, subs = build_parser()
    try:
        args = _apply_config(parser, subs, argv)
        return args.func(args)
    except TnsrFormatError as exc:
        return _fail(EXIT_IO, f"malformed input: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except (UsageError, ValidationError, ValueError) as exc:
        return _fail(EXIT_ARGS, str(exc))


if __name__ == "__main__":
    sys.exit(main())
