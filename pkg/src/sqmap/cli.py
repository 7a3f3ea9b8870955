"""Command-line interface: ``sqmap run | fit | eval | gen-scene``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Scenario fields can be overridden with dotted flags that mirror the JSON
paths, e.g. ``--noise.point-sigma 0`` or ``--pipeline.eif.n-trees 50``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import io as sio
from .geometry import ObjectPose
from .mapper import evaluate
from .pose import centroid_translation, estimate_yaw_pca
from .shape import FitConfig, FitError, NonFiniteCostError, fit_landmark
from .simulator import generate_trajectory, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("sqmap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sqmap", description="Superquadric object mapping on synthetic scenes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="run a scenario end to end and write the map and reports")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--backend", choices=["inline", "thread"], default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("fit", help="fit a superquadric to a point file")
    p.add_argument("points", help="XYZ text/CSV file or ASCII PLY")
    p.add_argument("--yaw", type=float, default=None, help="yaw in radians (default: PCA estimate)")
    p.add_argument("--t", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"),
                   help="translation (default: centroid)")
    p.add_argument("--no-recenter", action="store_true",
                   help="keep the given translation instead of the extent centre")
    p.add_argument("--grid-steps", type=int, default=FitConfig.grid_steps)
    p.add_argument("--mesh", default=None, help="write the fitted surface as PLY")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the fit is deterministic")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("eval", help="score a map against ground truth by 3D IoU")
    p.add_argument("map", help="map JSON")
    p.add_argument("truth", help="ground truth: scenario JSON or map-format JSON")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="write the per-object CSV here")
    p.add_argument("--json", default=None, help="write the JSON summary here")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("gen-scene", help="write the benchmark scenario (and optional ground truth)")
    p.add_argument("-o", "--out", required=True, help="scenario JSON to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-frames", type=int, default=200)
    p.add_argument("--truth-dir", default=None,
                   help="also dump ground truth JSON, per-object PLY and the trajectory here")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


# -- dotted overrides -------------------------------------------------------

def split_overrides(argv):
    """Separate ``--a.b value`` / ``--a.b=value`` flags from the rest."""
    rest, overrides = [], []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            if "=" in tok:
                key, val = tok[2:].split("=", 1)
            else:
                if i + 1 >= len(argv):
                    raise UsageError(f"override {tok} needs a value")
                key, val = tok[2:], argv[i + 1]
                i += 1
            overrides.append((key, val))
        else:
            rest.append(tok)
        i += 1
    return rest, overrides


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    for key, val in overrides:
        path = [part.replace("-", "_") for part in key.split(".")]
        node = doc
        for part in path[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise sio.DataError("cannot override inside a non-object", ".".join(path))
            node = nxt
        node[path[-1]] = _parse_value(val)
    return doc


def _setup_logging(verbosity: int, logfile: Path | None = None):
    log.handlers.clear()
    log.setLevel(logging.DEBUG)
    log.propagate = False
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING - 10 * min(verbosity, 2))
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(console)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w")
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(fh)


# -- commands --------------------------------------------------------------

def cmd_run(args, overrides) -> int:
    doc = sio.read_json(args.scenario)
    if not isinstance(doc, dict):
        raise sio.DataError("scenario must be a JSON object", str(args.scenario))
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.backend is not None:
        doc["backend"] = args.backend
    apply_overrides(doc, overrides)
    sc = sio.scenario_from_json(doc)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(args.verbose, out / "run.log")
    log.info("sqmap %s, kernels: %s", __version__, kernels.IMPLEMENTATION)
    log.info("scenario %s, seed %d, %d objects, %d frames", args.scenario, sc["seed"],
             len(sc["scene"].objects), sc["trajectory"].n_frames)
    log.info("noise: %s", sc["noise"])
    log.info("pipeline: %s", sio.dumps(sc["pipeline"].to_dict()).replace("\n", " "))

    t0 = time.perf_counter()
    result = run_scenario(sc["scene"], sc["trajectory"], sc["noise"], sc["pipeline"],
                          eval_samples=sc["eval_samples"], eval_seed=sc["eval_seed"],
                          duplicate_window=sc["duplicate_window"], backend=sc["backend"])
    elapsed = time.perf_counter() - t0
    for r in result.reports:
        log.debug("frame %d: %d associations, created %s, merged %s, removed %d+%d, %.2f ms",
                  r.frame_id, len(r.associations), r.created, r.merged, r.removed_reprojection,
                  r.removed_eif, r.front_time_s * 1e3)

    omap, report = result.map, result.evaluation
    sio.write_json(out / "map.json", sio.map_to_json(omap))
    mesh_dir = out / "landmarks"
    mesh_dir.mkdir(exist_ok=True)
    for lm in omap.sorted_landmarks():
        if lm.model is not None:
            sio.write_superquadric_ply(mesh_dir / f"landmark_{lm.id:03d}.ply", lm.model)
    sio.write_eval_csv(out / "eval.csv", report)
    sio.write_eval_json(out / "eval.json", report)
    frames = generate_trajectory(sc["trajectory"], sc["scene"])
    sio.write_trajectory(out / "trajectory.jsonl", frames)

    ft = result.front_times
    log.info("front stage: mean %.2f ms, max %.2f ms; total %.2f s",
             ft.mean() * 1e3 if len(ft) else 0.0, ft.max() * 1e3 if len(ft) else 0.0, elapsed)
    print(f"landmarks: {report.landmark_count} (truth {report.truth_count})")
    print(f"mean iou3d: {report.mean_iou:.4f}")
    if len(ft):
        print(f"front stage: mean {ft.mean() * 1e3:.2f} ms, max {ft.max() * 1e3:.2f} ms")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_fit(args, overrides) -> int:
    _setup_logging(args.verbose)
    pts = sio.read_points(args.points)
    if len(pts) < 8:
        raise FitError(f"too few points: {len(pts)} < 8")
    if not np.all(np.isfinite(pts)):
        raise sio.DataError("non-finite coordinates", str(args.points))
    t = np.asarray(args.t, dtype=float) if args.t is not None else centroid_translation(pts)
    if args.yaw is not None:
        yaw = args.yaw
    else:
        est = estimate_yaw_pca(pts)
        yaw = est.yaw if est.ok else 0.0
        log.info("yaw from PCA: %.4f rad%s", yaw, "" if est.ok else " (degenerate, using 0)")
    model = fit_landmark(pts, ObjectPose(yaw, tuple(t)), FitConfig(grid_steps=args.grid_steps),
                         recenter=not args.no_recenter)
    print(sio.dumps(model.to_dict()), end="")
    if args.mesh:
        sio.write_superquadric_ply(args.mesh, model)
        log.info("mesh written to %s", args.mesh)
    return EXIT_OK


def cmd_eval(args, overrides) -> int:
    _setup_logging(args.verbose)
    if args.samples < 10_000:
        raise UsageError("--samples must be at least 10000")
    landmarks = sio.read_landmarks(args.map)
    truth = sio.read_truth(args.truth)
    report = evaluate(landmarks, truth, args.samples, args.seed)
    print(f"{'object_id':>9}  {'truth_id':>8}  {'iou3d':>8}")
    for oid, tid, iou in report.csv_rows():
        print(f"{str(oid):>9}  {str(tid):>8}  {iou:8.4f}")
    print(f"mean iou3d: {report.mean_iou:.4f}  landmarks: {report.landmark_count}  "
          f"truth: {report.truth_count}")
    if args.csv:
        sio.write_eval_csv(args.csv, report)
    if args.json:
        sio.write_eval_json(args.json, report)
    return EXIT_OK


def cmd_gen_scene(args, overrides) -> int:
    _setup_logging(args.verbose)
    doc = sio.benchmark_scenario_json(args.seed)
    doc["trajectory"]["n_frames"] = args.n_frames
    apply_overrides(doc, overrides)
    sc = sio.scenario_from_json(doc)  # validate before writing
    sio.write_json(args.out, doc)
    if args.truth_dir:
        d = Path(args.truth_dir)
        d.mkdir(parents=True, exist_ok=True)
        truth = {"format_version": sio.FORMAT_VERSION, "landmarks": []}
        for i, o in enumerate(sc["scene"].objects):
            entry = {"id": i, "class": o.class_label}
            entry.update(o.sq.to_dict())
            truth["landmarks"].append(entry)
            sio.write_superquadric_ply(d / f"object_{i:03d}.ply", o.sq)
        sio.write_json(d / "truth.json", truth)
        sio.write_trajectory(d / "trajectory.jsonl", generate_trajectory(sc["trajectory"], sc["scene"]))
    print(f"scenario written to {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "fit": cmd_fit, "eval": cmd_eval, "gen-scene": cmd_gen_scene}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = split_overrides(argv)
        args = build_parser().parse_args(rest)
        if args.command is None:
            raise UsageError("sqmap: a command is required (run, fit, eval, gen-scene)")
        if overrides and args.command not in ("run", "gen-scene"):
            raise UsageError(f"dotted overrides are not accepted by '{args.command}'")
        return COMMANDS[args.command](args, overrides)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteCostError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (sio.DataError, FitError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
