"""KITTI-format detection parsing, JSON scenario configs, CSV reports."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import IO, Any

from .metrics import MetricsReport
from .scenario import (
    CLASS_LABELS,
    DYNAMICS,
    KMH,
    ClassifiedObject,
    DetectedBox3D,
    Frame,
    Lane,
    PlanningContext,
    RoadType,
    Scenario,
    ValidationResult,
    VehicleState,
    normalize_angle,
    speed_range,
    validate_scenario,
)

log = logging.getLogger(__name__)

GT_FIELDS = 15
DET_FIELDS = 16


class MalformedRecord(ValueError):
    def __init__(self, line_no: int, reason: str = ""):
        super().__init__(f"line {line_no}: {reason}" if reason else f"line {line_no}")
        self.line_no = line_no


class SchemaError(ValueError):
    def __init__(self, path: str, reason: str = "missing or invalid"):
        super().__init__(f"{path}: {reason}")
        self.path = path


class ValidationFailed(ValueError):
    def __init__(self, result: ValidationResult):
        super().__init__("; ".join(result.violations))
        self.result = result


class Detections(list):
    """List of boxes that also remembers how many records were skipped."""

    skipped: int = 0


def camera_to_ego(
    h: float, w: float, l: float, x: float, y: float, z: float, ry: float,
    camera_offset=(0.0, 0.0, 0.0),
) -> tuple[tuple[float, float, float], tuple[float, float, float], float]:
    """KITTI camera frame (x right, y down, z forward; location at box bottom) to ego."""
    ox, oy, oz = camera_offset
    center = (z + ox, -x + oy, -y + h / 2.0 + oz)
    return center, (l, w, h), normalize_angle(-ry - math.pi / 2.0)


def parse_detections(text: str | bytes, camera_offset=(0.0, 0.0, 0.0)) -> Detections:
    """One box per record, order preserved.

    Records have 15 fields (ground truth, score 1) or 16 (trailing score).
    Classes other than Car are skipped and counted in ``.skipped``.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    out = Detections()
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (GT_FIELDS, DET_FIELDS):
            raise MalformedRecord(line_no, f"expected 15 or 16 fields, got {len(fields)}")
        try:
            nums = [float(f) for f in fields[1:]]
        except ValueError:
            raise MalformedRecord(line_no, "non-numeric field") from None
        if not all(math.isfinite(v) for v in nums):
            raise MalformedRecord(line_no, "non-finite field")
        label = fields[0]
        if label not in CLASS_LABELS:
            out.skipped += 1
            continue
        h, w, l, x, y, z, ry = nums[7:14]
        score = nums[14] if len(nums) == DET_FIELDS - 1 else 1.0
        if min(h, w, l) <= 0:
            raise MalformedRecord(line_no, "dims must be positive")
        if not 0.0 <= score <= 1.0:
            raise MalformedRecord(line_no, "score outside [0, 1]")
        center, dims, yaw = camera_to_ego(h, w, l, x, y, z, ry, camera_offset)
        out.append(DetectedBox3D(center, dims, yaw, label, score))
    if out.skipped:
        log.warning("skipped %d records with unsupported class labels", out.skipped)
    return out


# --- scenario config ------------------------------------------------------


def _get(d: Any, key: str, path: str, kind=float, default=...):
    if not isinstance(d, dict):
        raise SchemaError(path.rsplit(".", 1)[0] if "." in path else path, "expected an object")
    if key not in d:
        if default is ...:
            raise SchemaError(path)
        return default
    v = d[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(path, "expected a finite number")
        return float(v)
    if kind is bool:
        if not isinstance(v, bool):
            raise SchemaError(path, "expected true or false")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise SchemaError(path, "expected a string")
        return v
    if kind is list:
        if not isinstance(v, list):
            raise SchemaError(path, "expected a list")
        return v
    raise TypeError(kind)


def _point(v, path: str) -> tuple[float, ...]:
    if not isinstance(v, list) or not all(
        isinstance(c, (int, float)) and not isinstance(c, bool) and math.isfinite(c) for c in v
    ):
        raise SchemaError(path, "expected a list of numbers")
    return tuple(float(c) for c in v)


def scenario_from_dict(doc: dict, validate: bool = True) -> Scenario:
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected an object")
    sid = _get(doc, "id", "id", str)
    try:
        road = RoadType(_get(doc, "road_type", "road_type", str).lower())
    except ValueError:
        raise SchemaError("road_type", "expected 'street' or 'highway'") from None
    lanes = []
    for i, ld in enumerate(_get(doc, "lanes", "lanes", list)):
        p = f"lanes[{i}]"
        pts = _get(ld, "centerline", f"{p}.centerline", list)
        cl = []
        for k, pt in enumerate(pts):
            xy = _point(pt, f"{p}.centerline[{k}]")
            if len(xy) != 2:
                raise SchemaError(f"{p}.centerline[{k}]", "expected [x, y]")
            cl.append(xy)
        lanes.append(Lane(tuple(cl), _get(ld, "width", f"{p}.width")))
    ego = doc.get("ego")
    if not isinstance(ego, dict):
        raise SchemaError("ego")
    state = VehicleState(
        _get(ego, "x", "ego.x"),
        _get(ego, "y", "ego.y"),
        _get(ego, "speed_kmh", "ego.speed_kmh") * KMH,
        _get(ego, "heading", "ego.heading", default=0.0),
    )
    ctx = PlanningContext(state, speed_range(road), DYNAMICS[road], road)
    objects = []
    for i, od in enumerate(_get(doc, "objects", "objects", list, default=[])):
        p = f"objects[{i}]"
        box = DetectedBox3D(
            (_get(od, "x", f"{p}.x"), _get(od, "y", f"{p}.y"), _get(od, "z", f"{p}.z", default=0.75)),
            (_get(od, "l", f"{p}.l"), _get(od, "w", f"{p}.w"), _get(od, "h", f"{p}.h")),
            _get(od, "yaw", f"{p}.yaw", default=0.0),
            _get(od, "class", f"{p}.class", str, default="Car"),
            _get(od, "score", f"{p}.score", default=1.0),
        )
        moving = _get(od, "moving", f"{p}.moving", bool, default=False)
        vel = (_get(od, "vx", f"{p}.vx", default=0.0), _get(od, "vy", f"{p}.vy", default=0.0))
        objects.append(ClassifiedObject(box, moving, vel))
    frames = []
    for i, fd in enumerate(_get(doc, "frames", "frames", list, default=[])):
        p = f"frames[{i}]"
        centers = []
        for k, c in enumerate(_get(fd, "centers", f"{p}.centers", list)):
            xy = _point(c, f"{p}.centers[{k}]")
            if len(xy) != 2:
                raise SchemaError(f"{p}.centers[{k}]", "expected [x, y]")
            centers.append(xy)
        frames.append(Frame(_get(fd, "t", f"{p}.t"), tuple(centers)))
    off = doc.get("camera_offset", [0.0, 0.0, 0.0])
    off = _point(off, "camera_offset")
    if len(off) != 3:
        raise SchemaError("camera_offset", "expected [x, y, z]")
    s = Scenario(sid, road, tuple(lanes), ctx, tuple(objects), tuple(frames), off)
    if validate:
        res = validate_scenario(s)
        if not res.ok:
            raise ValidationFailed(res)
    return s


def parse_scenario(config_text: str) -> Scenario:
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON: {e.msg} at line {e.lineno}") from None
    return scenario_from_dict(doc)


def scenario_to_dict(s: Scenario) -> dict:
    ego = s.ego
    return {
        "id": s.id,
        "road_type": s.road_type.value,
        "camera_offset": list(s.camera_offset),
        "lanes": [{"centerline": [list(p) for p in l.centerline], "width": l.width} for l in s.lanes],
        "ego": {"x": ego.x, "y": ego.y, "speed_kmh": ego.v / KMH, "heading": ego.phi},
        "objects": [
            {
                "x": o.box.center[0], "y": o.box.center[1], "z": o.box.center[2],
                "l": o.box.dims[0], "w": o.box.dims[1], "h": o.box.dims[2],
                "yaw": o.box.yaw, "class": o.box.class_label, "score": o.box.score,
                "moving": o.is_moving, "vx": o.velocity[0], "vy": o.velocity[1],
            }
            for o in s.objects
        ],
        "frames": [{"t": f.t, "centers": [list(c) for c in f.centers]} for f in s.frames],
    }


def write_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


# --- reports --------------------------------------------------------------

REPORT_COLUMNS = (
    "intention", "setting", "success_rate", "collision_rate", "safe_driving_rate",
    "ap_easy", "ap_moderate", "ap_hard", "k_dts", "k_trj", "k_cls", "errors",
)


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.6f}"


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.sorted_rows():
        w.writerow([
            r.intention.value, r.setting, _fmt(r.m_suc), _fmt(r.m_cls), _fmt(r.m_saf),
            _fmt(r.ap_easy), _fmt(r.ap_moderate), _fmt(r.ap_hard),
            r.k_dts, r.k_trj, r.k_cls, r.errors,
        ])
    return buf.getvalue()


def write_report(report: MetricsReport, destination: str | Path | IO[str]) -> None:
    text = report_csv(report)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    Path(destination).write_bytes(text.encode("utf-8"))


def read_report(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))
