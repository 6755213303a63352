"""Command-line frontend: synth, fuse, eval, lcurve, and bench pipelines.

All commands write their outputs under a single ``--out`` directory with
fixed file names so runs are diffable.  Exit codes: 0 on success, 2 on
usage errors, 1 on runtime errors.

Unit conventions: ``--alpha``/``--beta`` and ``--hoa`` are meters and are
rescaled internally through the joint height normalization; ``--gamma`` is
the dimensionless regularization weight on normalized heights.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import fuse_median, fuse_weighted_average
from .errors import DemFuseError
from .fusion import DEFAULT_GAMMA, HuberFusion, TVL1Fusion, WeightedAverageFusion
from .quality import evaluate, write_report_csv, write_report_json, write_residual_pgm
from .raster import (
    ESRI_ASCII,
    FORMATS,
    DemGrid,
    coregister_shift,
    grids_to_stack,
    read_grid,
    require_compatible,
    translate_grid,
    write_grid,
)
from .synth import PRESET_NAMES, SceneSpec, generate_scene, preset, with_seed
from .tuning import DEFAULT_GAMMA_GRID, lcurve_select_gamma
from .variational import DEFAULT_STEP, FusionConfig, TraceEntry
from .weights import HeightErrorMap, renormalize_weights, weights_from_hem

MANIFEST_SCHEMA = 1

_EXT = {ESRI_ASCII: ".asc", "raw-f32": ".f32"}


class UsageError(Exception):
    """Bad flag combination detected after parsing; exits with code 2."""


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_inputs(paths) -> list[DemGrid]:
    grids = [read_grid(p) for p in paths]
    require_compatible(grids)
    return grids


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _write_trace_csv(path: Path, trace: list[TraceEntry]) -> None:
    lines = ["iteration,energy,max_dual_norm,rel_change"]
    for t in trace:
        lines.append(f"{t.iteration},{t.energy!r},{t.max_dual_norm!r},{t.rel_change!r}")
    path.write_text("\n".join(lines) + "\n")


def _variational_params(args) -> dict:
    return dict(
        gamma=args.gamma,
        theta=args.theta,
        tau=args.tau,
        sigma=args.sigma,
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
    )


def _coregister_all(
    grids: list[DemGrid], hems: list[HeightErrorMap] | None, max_shift: int
) -> tuple[list[DemGrid], list[HeightErrorMap] | None, list[dict]]:
    """Align inputs 2..k (and their HEMs) to input 1 by integer shift + bias."""
    aligned = [grids[0]]
    hems_out = [hems[0]] if hems else None
    log = [{"input": 1, "shift": [0, 0], "bias": 0.0}]
    for i in range(1, len(grids)):
        g, (dx, dy), bias = coregister_shift(grids[i], grids[0], max_shift)
        aligned.append(g)
        log.append({"input": i + 1, "shift": [dx, dy], "bias": bias})
        if hems_out is not None:
            hems_out.append(HeightErrorMap.from_grid(translate_grid(hems[i].grid, dx, dy)))
    return aligned, hems_out, log


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if (args.preset is None) == (args.spec is None):
        raise UsageError("pass exactly one of --preset or --spec")
    spec = preset(args.preset) if args.preset else SceneSpec.read(args.spec)
    if args.seed is not None:
        spec = with_seed(spec, args.seed)
    out = _out_dir(args)
    ext = _EXT[args.format]
    truth, inputs, hems = generate_scene(spec)
    write_grid(truth, out / f"truth{ext}", args.format)
    for i, g in enumerate(inputs, start=1):
        write_grid(g, out / f"input_{i}{ext}", args.format)
    for i, h in enumerate(hems, start=1):
        write_grid(h.grid, out / f"hem_{i}{ext}", args.format)
    (out / "scene.json").write_text(spec.to_json())
    print(f"wrote scene ({spec.rows}x{spec.cols}, {spec.n_inputs} inputs) to {out}")
    return 0


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


def _run_variational(grids: list[DemGrid], method: str, params: dict, trace: bool):
    cls = TVL1Fusion if method == "tvl1" else HuberFusion
    est = cls(**params, energy_trace_every=1 if trace else 0)
    stack = grids_to_stack(grids)
    fused_values = est.fit_transform(stack)
    return grids[0].with_heights(fused_values), est


def cmd_fuse(args) -> int:
    if args.method in ("tvl1", "huber", "median") and (args.hem or args.weights):
        raise UsageError(f"--hem/--weights only apply to --method wa, not {args.method}")
    grids = _read_inputs(args.inputs)
    hems = None
    if args.hem:
        if len(args.hem) != len(grids):
            raise UsageError(
                f"got {len(grids)} inputs but {len(args.hem)} --hem maps"
            )
        hems = [HeightErrorMap.read(p) for p in args.hem]
    if args.method == "wa" and not args.hem and not args.weights:
        raise UsageError("--method wa requires --hem per input or --weights per input")
    if args.weights and len(args.weights) != len(grids):
        raise UsageError(f"got {len(grids)} inputs but {len(args.weights)} --weights grids")

    out = _out_dir(args)
    coreg_log = None
    if args.coregister is not None:
        grids, hems, coreg_log = _coregister_all(grids, hems, args.coregister)

    t0 = time.perf_counter()
    est = None
    if args.method == "median":
        fused = fuse_median(grids)
    elif args.method == "wa":
        if hems is not None:
            wmaps = weights_from_hem(hems)
        else:
            wmaps = renormalize_weights([read_grid(p) for p in args.weights])
        fused = fuse_weighted_average(grids, wmaps)
    else:
        params = {k: v for k, v in _variational_params(args).items()}
        if args.method == "huber":
            params.update(alpha=args.alpha, beta=args.beta)
        fused, est = _run_variational(grids, args.method, params, args.trace)
    wall = time.perf_counter() - t0

    ext = _EXT[args.format]
    fused_path = out / f"fused{ext}"
    write_grid(fused, fused_path, args.format)

    variational = args.method in ("tvl1", "huber")
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": "fuse",
        "method": args.method,
        "inputs": [str(p) for p in args.inputs],
        "hem": [str(p) for p in args.hem] if args.hem else None,
        "weights": [str(p) for p in args.weights] if args.weights else None,
        "coregister": coreg_log,
        "gamma": args.gamma if variational else None,
        "alpha": args.alpha if args.method == "huber" else None,
        "beta": args.beta if args.method == "huber" else None,
        "theta": args.theta if variational else None,
        "tau": args.tau if variational else None,
        "sigma": args.sigma if variational else None,
        "max_iters": args.max_iters if variational else None,
        "rel_tol": args.rel_tol if variational else None,
        "iterations": est.n_iter_ if est else None,
        "final_rel_change": (
            est.state_.final_rel_change if est and est.state_ else None
        ),
        "converged": est.state_.converged if est and est.state_ else None,
        "normalization": (
            {"h_min": est.h_min_, "h_max": est.h_max_} if est else None
        ),
        "wall_time_s": wall,
        "output": fused_path.name,
    }
    _write_json(out / "manifest.json", manifest)
    if args.trace and est is not None and est.state_ is not None:
        _write_trace_csv(out / "energy_trace.csv", est.state_.energy_trace)
    print(f"fused {len(grids)} inputs with {args.method} -> {fused_path}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    candidate = read_grid(args.candidate)
    reference = read_grid(args.reference)
    report, residuals = evaluate(candidate, reference, hoas=args.hoa)
    out = _out_dir(args)
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    ext = _EXT[args.format]
    write_grid(residuals, out / f"residuals{ext}", args.format)
    write_residual_pgm(residuals, out / "residual_map.pgm", vmax=args.map_max)
    print(
        f"rmse={report.rmse:.4f} mae={report.mae:.4f} nmad={report.nmad:.4f} "
        f"(n={report.n_valid}) -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# lcurve
# ---------------------------------------------------------------------------


def cmd_lcurve(args) -> int:
    from .raster import joint_normalize

    grids = _read_inputs(args.inputs)
    normalized, ctx = joint_normalize(grids)
    stack = grids_to_stack(normalized)
    method = "tv_l1" if args.method == "tvl1" else "huber"
    config = FusionConfig(
        method=method,
        gamma=1.0,
        alpha=args.alpha,
        beta=args.beta,
        theta=args.theta,
        tau=args.tau,
        sigma=args.sigma,
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
    ).rescaled(ctx.span)
    gammas = args.gammas if args.gammas else list(DEFAULT_GAMMA_GRID)
    result = lcurve_select_gamma(stack, config, gammas)

    out = _out_dir(args)
    lines = ["gamma,log_data,log_reg,curvature"]
    for pt in result.points:
        lines.append(f"{pt.gamma!r},{pt.log_data!r},{pt.log_reg!r},{pt.curvature!r}")
    (out / "lcurve.csv").write_text("\n".join(lines) + "\n")
    _write_json(
        out / "selected.json",
        {
            "schema": MANIFEST_SCHEMA,
            "command": "lcurve",
            "method": args.method,
            "gamma_star": result.gamma_star,
            "candidates": [pt.gamma for pt in result.points],
        },
    )
    if args.apply:
        params = dict(_variational_params(args), gamma=result.gamma_star)
        if args.method == "huber":
            params.update(alpha=args.alpha, beta=args.beta)
        fused, est = _run_variational(grids, args.method, params, trace=False)
        ext = _EXT[args.format]
        write_grid(fused, out / f"fused{ext}", args.format)
        _write_json(
            out / "manifest.json",
            {
                "schema": MANIFEST_SCHEMA,
                "command": "lcurve --apply",
                "method": args.method,
                "gamma": result.gamma_star,
                "alpha": args.alpha,
                "beta": args.beta,
                "theta": args.theta,
                "tau": args.tau,
                "sigma": args.sigma,
                "max_iters": args.max_iters,
                "rel_tol": args.rel_tol,
                "iterations": est.n_iter_,
                "output": f"fused{ext}",
            },
        )
    print(f"selected gamma = {result.gamma_star!r} -> {out / 'lcurve.csv'}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def cmd_bench(args) -> int:
    spec = preset(args.preset)
    if args.seed is not None:
        spec = with_seed(spec, args.seed)
    truth, inputs, hems = generate_scene(spec)
    stack = grids_to_stack(inputs)
    sigma_stack = np.stack([h.sigma for h in hems])
    hoas = list(spec.outlier_hoas)

    fusions: dict[str, np.ndarray] = {}
    fusions["wa"] = WeightedAverageFusion().fit_transform(stack, hem=sigma_stack)
    fusions["tvl1"] = TVL1Fusion(gamma=args.gamma, max_iters=args.max_iters).fit_transform(stack)
    fusions["huber"] = HuberFusion(
        gamma=args.gamma, alpha=args.alpha, beta=args.beta, max_iters=args.max_iters
    ).fit_transform(stack)

    rows = []
    for i, g in enumerate(inputs, start=1):
        report, _ = evaluate(g, truth, hoas=hoas)
        rows.append(("input_%d" % i, report))
    for name in ("wa", "tvl1", "huber"):
        fused = truth.with_heights(fusions[name])
        report, _ = evaluate(fused, truth, hoas=hoas)
        rows.append((name, report))

    out = _out_dir(args)
    from .quality import CSV_HEADER

    csv_lines = ["dem," + CSV_HEADER]
    for name, report in rows:
        csv_lines.append(f"{name},{report.to_csv_row()}")
    (out / "bench.csv").write_text("\n".join(csv_lines) + "\n")
    _write_json(
        out / "bench.json",
        {
            "schema": MANIFEST_SCHEMA,
            "command": "bench",
            "preset": args.preset,
            "seed": spec.seed,
            "gamma": args.gamma,
            "alpha": args.alpha,
            "beta": args.beta,
            "max_iters": args.max_iters,
            "rows": [dict(dem=name, **report.to_dict()) for name, report in rows],
        },
    )
    print(f"bench table ({len(rows)} rows) -> {out / 'bench.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_variational_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA,
                   help="regularization weight, normalized-unit scale (default %(default)s)")
    p.add_argument("--alpha", type=float, default=4.0,
                   help="Huber data threshold in meters (default %(default)s)")
    p.add_argument("--beta", type=float, default=1.0,
                   help="Huber gradient threshold in meters (default %(default)s)")
    p.add_argument("--theta", type=float, default=1.0, help="extrapolation in [0,1]")
    p.add_argument("--tau", type=float, default=DEFAULT_STEP, help="primal step size")
    p.add_argument("--sigma", type=float, default=DEFAULT_STEP, help="dual step size")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-5,
                   help="relative primal-change stopping threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demfuse",
        description="Fuse coregistered raster DEMs and evaluate the result.",
    )
    parser.add_argument("--version", action="version", version=f"demfuse {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--spec", help="scene spec JSON file (alternative to --preset)")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--format", choices=FORMATS, default=ESRI_ASCII)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse input DEMs into one")
    p.add_argument("inputs", nargs="+", help="input DEM files")
    p.add_argument("--method", choices=("wa", "median", "tvl1", "huber"), required=True)
    p.add_argument("--hem", action="append",
                   help="height-error map per input (repeat; wa only)")
    p.add_argument("--weights", action="append",
                   help="explicit weight grid per input (repeat; wa only)")
    p.add_argument("--coregister", type=int, metavar="N",
                   help="align inputs to the first by integer shifts up to N pixels")
    p.add_argument("--trace", action="store_true", help="write energy_trace.csv")
    p.add_argument("--format", choices=FORMATS, default=ESRI_ASCII)
    p.add_argument("--out", required=True, help="output directory")
    _add_variational_flags(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate a DEM against a reference")
    p.add_argument("candidate", help="DEM to evaluate")
    p.add_argument("--reference", required=True)
    p.add_argument("--hoa", action="append", type=float,
                   help="height of ambiguity in meters (repeat to give several)")
    p.add_argument("--map-max", type=float,
                   help="residual magnitude mapped to white in the PGM "
                        "(default: 99th percentile)")
    p.add_argument("--format", choices=FORMATS, default=ESRI_ASCII)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lcurve", help="select gamma by the L-curve corner")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--method", choices=("tvl1", "huber"), default="tvl1")
    p.add_argument("--gammas", type=lambda s: [float(x) for x in s.split(",")],
                   help="comma-separated candidates (default: 15 log-spaced in [0.01, 10])")
    p.add_argument("--apply", action="store_true",
                   help="also fuse the inputs with the selected gamma")
    p.add_argument("--format", choices=FORMATS, default=ESRI_ASCII)
    p.add_argument("--out", required=True, help="output directory")
    _add_variational_flags(p)
    p.set_defaults(func=cmd_lcurve)

    p = sub.add_parser("bench", help="synthetic end-to-end benchmark table")
    p.add_argument("--preset", choices=PRESET_NAMES, required=True)
    p.add_argument("--seed", type=int, help="override the preset seed")
    p.add_argument("--out", required=True, help="output directory")
    _add_variational_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code
        return int(code) if code is not None else 0
    try:
        return int(args.func(args) or 0)
    except UsageError as e:
        print(f"demfuse: usage error: {e}", file=sys.stderr)
        return 2
    except DemFuseError as e:
        print(f"demfuse: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"demfuse: error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
