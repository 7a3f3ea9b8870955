"""File formats: scenario JSON, map JSON, ASCII PLY, XYZ point lists,
trajectory JSON lines and evaluation CSV/JSON.

Every structured format carries ``format_version`` (PLY as a header comment;
the CSV keeps its fixed three-column header).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .association import AssocConfig
from .camera import CameraFrame, Intrinsics
from .geometry import Superquadric, surface_mesh
from .mapper import ObjectMap, PipelineConfig
from .outliers import EifConfig
from .shape import FitConfig
from .simulator import NoiseSpec, SceneObject, SceneSpec, TrajectorySpec, benchmark_scene

FORMAT_VERSION = 1
CSV_HEADER = ("object_id", "truth_id", "iou3d")


class DataError(ValueError):
    """Malformed input file; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# -- JSON helpers -------------------------------------------------------------

def dumps(obj) -> str:
    """Canonical JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {p}: {exc}") from exc


def _check_version(d: dict, where: str):
    v = d.get("format_version", FORMAT_VERSION)
    if v != FORMAT_VERSION:
        raise DataError(f"unsupported format_version {v!r} (expected {FORMAT_VERSION})",
                        f"{where}.format_version")


# -- superquadrics and maps -----------------------------------------------------

def superquadric_from_json(d, where: str = "superquadric") -> Superquadric:
    if not isinstance(d, dict):
        raise DataError("expected an object", where)
    for key in ("ax", "ay", "az", "t"):
        if key not in d:
            raise DataError("missing field", f"{where}.{key}")
    for key in ("ax", "ay", "az", "eps1", "eps2", "yaw"):
        if key in d:
            _num(d[key], f"{where}.{key}")
    t = d["t"]
    if not (isinstance(t, (list, tuple)) and len(t) == 3):
        raise DataError("expected [x, y, z]", f"{where}.t")
    for k, v in enumerate(t):
        _num(v, f"{where}.t[{k}]")
    full = {"eps1": 1.0, "eps2": 1.0, "yaw": 0.0}
    full.update(d)
    try:
        return Superquadric.from_dict(full)
    except (TypeError, ValueError) as exc:
        bad = _guess_field(str(exc), {k: None for k in ("ax", "ay", "az", "eps1", "eps2")})
        raise DataError(str(exc), f"{where}.{bad}" if bad else where) from exc


def map_to_json(omap: ObjectMap) -> dict:
    d = omap.to_dict()
    if omap.config is not None:
        d["config"] = omap.config.to_dict()
    return d


def read_landmarks(path):
    """(id, class, Superquadric | None) triples from a map JSON file."""
    d = read_json(path)
    if not isinstance(d, dict) or "landmarks" not in d:
        raise DataError("expected an object with a 'landmarks' list", str(path))
    _check_version(d, "map")
    out = []
    for i, lm in enumerate(d["landmarks"]):
        where = f"landmarks[{i}]"
        if "id" not in lm:
            raise DataError("missing field", f"{where}.id")
        label = lm.get("class")
        if label is None:
            raise DataError("missing field", f"{where}.class")
        model = None if lm.get("model", "") is None else superquadric_from_json(lm, where)
        out.append((lm["id"], label, model))
    return out


def read_truth(path):
    """(class, Superquadric) pairs from a scenario file or a map-format file."""
    d = read_json(path)
    if isinstance(d, dict) and "scene" in d:
        scene = scenario_from_json(d)["scene"]
        return scene.truth
    return [(label, model) for _, label, model in read_landmarks(path) if model is not None]


# -- PLY -------------------------------------------------------------------

def write_ply(path, vertices, faces=None):
    """ASCII PLY with float vertices and optional triangle faces."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces if faces is not None else np.empty((0, 3)), dtype=np.int64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"comment format_version {FORMAT_VERSION}",
             f"element vertex {len(v)}", "property float x", "property float y", "property float z"]
    if len(f):
        lines += [f"element face {len(f)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    lines += [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in v]
    lines += [f"3 {a} {b} {c}" for a, b, c in f]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    """Vertices (N, 3) of an ASCII PLY file."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise DataError("not a PLY file", str(path))
    n_vert, i = None, 1
    fmt = None
    while i < len(text) and text[i].strip() != "end_header":
        tok = text[i].split()
        if tok[:1] == ["format"]:
            fmt = tok[1]
        elif tok[:2] == ["element", "vertex"]:
            n_vert = int(tok[2])
        i += 1
    if fmt != "ascii":
        raise DataError(f"only ASCII PLY is supported (got {fmt})", str(path))
    if n_vert is None or i == len(text):
        raise DataError("malformed PLY header", str(path))
    rows = text[i + 1:i + 1 + n_vert]
    if len(rows) != n_vert:
        raise DataError(f"expected {n_vert} vertices, found {len(rows)}", str(path))
    try:
        return np.array([[float(t) for t in r.split()[:3]] for r in rows]).reshape(-1, 3)
    except ValueError as exc:
        raise DataError(f"bad vertex row: {exc}", str(path)) from exc


def write_superquadric_ply(path, sq: Superquadric, n_eta: int = 16, n_omega: int = 32):
    verts, tris = surface_mesh(sq, n_eta, n_omega, world=True)
    write_ply(path, verts, tris)


def read_points(path):
    """XYZ points from PLY, or from a whitespace/comma separated text file
    (``#`` comments and a non-numeric header line are skipped)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    if p.suffix.lower() == ".ply":
        return read_ply(p)
    rows = []
    for k, line in enumerate(p.read_text().splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.replace(",", " ").split()
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            if not rows:
                continue  # header
            raise DataError(f"line {k + 1}: not numeric", str(p)) from None
        if len(vals) < 3:
            raise DataError(f"line {k + 1}: expected 3 coordinates, got {len(vals)}", str(p))
        rows.append(vals[:3])
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


# -- trajectories ------------------------------------------------------------

def frame_to_json(f: CameraFrame) -> dict:
    return {"format_version": FORMAT_VERSION, "frame_id": int(f.frame_id),
            "rotation": f.rotation.tolist(), "translation": f.translation.tolist(),
            "intrinsics": f.intrinsics.to_dict()}


def write_trajectory(path, frames):
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(frame_to_json(f), sort_keys=True) + "\n")


def read_trajectory(path):
    frames = []
    for k, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            frames.append(CameraFrame(d["frame_id"], np.array(d["rotation"]), np.array(d["translation"]),
                                      Intrinsics(**d.get("intrinsics", {}))))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(str(exc), f"line {k + 1}") from exc
    return frames


# -- evaluation reports --------------------------------------------------------

def write_eval_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for oid, tid, iou in report.csv_rows():
            w.writerow([oid, tid, f"{iou:.6f}"])


def write_eval_json(path, report):
    write_json(path, report.to_dict())


# -- scenario files ----------------------------------------------------------

def _build(cls, d, where: str, nested: dict | None = None):
    """Instantiate a frozen dataclass from a dict, naming bad fields."""
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise DataError("expected an object", where)
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in d.items():
        if key not in names:
            raise DataError("unknown field", f"{where}.{key}")
        if nested and key in nested:
            val = _build(nested[key], val, f"{where}.{key}")
        kwargs[key] = val
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        bad = _guess_field(str(exc), kwargs)
        raise DataError(str(exc), f"{where}.{bad}" if bad else where) from exc
    return obj


def _guess_field(message: str, kwargs: dict):
    for key in kwargs:
        if key in message:
            return key
    return None


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise DataError("expected a finite number", where)
    return float(v)


def _scene_from_json(d, seed: int) -> SceneSpec:
    where = "scene"
    if not isinstance(d, dict):
        raise DataError("expected an object", where)
    if d.get("preset") is not None:
        if d["preset"] != "benchmark":
            raise DataError(f"unknown preset {d['preset']!r}", f"{where}.preset")
        base = benchmark_scene(seed)
        ppo = d.get("points_per_object", base.points_per_object)
        return SceneSpec(base.objects, seed=seed, bounds=base.bounds, points_per_object=int(ppo))
    objs = []
    for i, o in enumerate(d.get("objects", [])):
        w = f"{where}.objects[{i}]"
        if not isinstance(o, dict):
            raise DataError("expected an object", w)
        if "class" not in o:
            raise DataError("missing field", f"{w}.class")
        objs.append(SceneObject(str(o["class"]), superquadric_from_json(o, w)))
    kw = {}
    if "bounds" in d:
        b = d["bounds"]
        if not (isinstance(b, list) and len(b) == 2 and all(len(x) == 3 for x in b)):
            raise DataError("expected [[xmin, ymin, zmin], [xmax, ymax, zmax]]", f"{where}.bounds")
        kw["bounds"] = b
    if "points_per_object" in d:
        kw["points_per_object"] = int(d["points_per_object"])
    try:
        return SceneSpec(tuple(objs), seed=seed, **kw)
    except ValueError as exc:
        raise DataError(str(exc), f"{where}.objects") from exc


def scenario_from_json(d: dict) -> dict:
    """Parse a scenario document into scene, trajectory, noise, pipeline
    config and run options."""
    if not isinstance(d, dict):
        raise DataError("scenario must be a JSON object")
    _check_version(d, "scenario")
    known = {"format_version", "seed", "scene", "trajectory", "noise", "pipeline",
             "duplicate_window", "eval", "backend"}
    for key in d:
        if key not in known:
            raise DataError("unknown field", key)
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise DataError("expected a non-negative integer", "seed")
    scene = _scene_from_json(d.get("scene", {"preset": "benchmark"}), seed)
    traj_d = dict(d.get("trajectory") or {})
    nested = {"intrinsics": Intrinsics}
    for key in ("start", "end"):
        if key in traj_d:
            traj_d[key] = tuple(traj_d[key])
    if "waypoints" in traj_d:
        traj_d["waypoints"] = tuple(tuple(w) for w in traj_d["waypoints"])
    trajectory = _build(TrajectorySpec, traj_d, "trajectory", nested)
    noise = _build(NoiseSpec, d.get("noise"), "noise")
    pipe_d = dict(d.get("pipeline") or {})
    if "yaw_method_overrides" in pipe_d:
        ov = pipe_d["yaw_method_overrides"]
        if not isinstance(ov, dict) or any(v not in ("line", "pca") for v in ov.values()):
            raise DataError("expected {class: 'line' | 'pca'}", "pipeline.yaw_method_overrides")
        pipe_d["yaw_method_overrides"] = tuple(sorted(ov.items()))
    pipe_d.setdefault("seed", seed)
    pipeline = _build(PipelineConfig, pipe_d, "pipeline",
                      {"eif": EifConfig, "fit": FitConfig, "assoc": AssocConfig})
    if "eif" not in (d.get("pipeline") or {}) or "seed" not in (d["pipeline"].get("eif") or {}):
        pipeline = replace(pipeline, eif=replace(pipeline.eif, seed=seed))
    window = d.get("duplicate_window")
    if window is not None:
        if not (isinstance(window, list) and len(window) == 2 and all(isinstance(x, int) for x in window)
                and 0 <= window[0] < window[1]):
            raise DataError("expected [start, stop] frame ids", "duplicate_window")
        window = tuple(window)
    ev = d.get("eval") or {}
    n_samples = ev.get("n_samples", 100_000)
    if not isinstance(n_samples, int) or n_samples < 10_000:
        raise DataError("expected an integer >= 10000", "eval.n_samples")
    backend = d.get("backend", "inline")
    if backend not in ("inline", "thread"):
        raise DataError("expected 'inline' or 'thread'", "backend")
    return {"scene": scene, "trajectory": trajectory, "noise": noise, "pipeline": pipeline,
            "duplicate_window": window, "eval_samples": n_samples,
            "eval_seed": int(ev.get("seed", seed)), "backend": backend, "seed": seed}


def benchmark_scenario_json(seed: int = 0) -> dict:
    """Scenario document for the five-object benchmark, with every object
    spelled out."""
    scene = benchmark_scene(seed)
    objs = []
    for o in scene.objects:
        d = {"class": o.class_label}
        d.update(o.sq.to_dict())
        objs.append(d)
    return {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "scene": {"objects": objs, "bounds": [list(b) for b in scene.bounds],
                  "points_per_object": scene.points_per_object},
        "trajectory": {"kind": "orbit", "n_frames": 200},
        "noise": {f.name: getattr(NoiseSpec(), f.name) for f in fields(NoiseSpec)},
        "pipeline": {},
        "eval": {"n_samples": 100_000},
    }
