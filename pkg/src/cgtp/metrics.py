"""Joint-prediction evaluation: displacement errors, miss rate under fixed
and velocity-scaled thresholds, oriented-box overlap rate, cut-in rate, and
average precision over score-ranked modes.

All trajectories are world-frame (M modes, T steps, 2). A mode is a
trajectory *pair*; the displacement metrics average or combine both agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import scene


class DegenerateBoxError(ValueError):
    """Oriented box with non-positive extent."""


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class EvalRecord:
    scenario_id: str
    scores: np.ndarray           # (M,)
    traj_a: np.ndarray           # (M, T, 2)
    traj_b: np.ndarray
    gt_a: np.ndarray             # (T, 2)
    gt_b: np.ndarray
    box_a: tuple = scene.DEFAULT_BOX
    box_b: tuple = scene.DEFAULT_BOX
    last_heading_a: float = 0.0  # heading at the last observed step
    last_heading_b: float = 0.0
    scenario: scene.Scenario | None = None

    @property
    def n_modes(self) -> int:
        return len(self.scores)

    @property
    def horizon(self) -> int:
        return self.gt_a.shape[0]

    def best_mode(self) -> int:
        """Highest-score mode, ties to the lower index."""
        return int(np.lexsort((np.arange(self.n_modes), -self.scores))[0])

    def gt_final_heading(self, agent: str) -> float:
        gt = self.gt_a if agent == "A" else self.gt_b
        if len(gt) >= 2 and np.linalg.norm(gt[-1] - gt[-2]) > 1e-9:
            d = gt[-1] - gt[-2]
            return math.atan2(d[1], d[0])
        return self.last_heading_a if agent == "A" else self.last_heading_b

    def gt_final_speed(self, agent: str) -> float:
        gt = self.gt_a if agent == "A" else self.gt_b
        if len(gt) >= 2:
            return float(np.linalg.norm(gt[-1] - gt[-2]) / scene.DT)
        return 0.0


def record_from_prediction(scenario: scene.Scenario, pred: dict) -> EvalRecord:
    """Build an evaluation record from a submission-format dict."""
    modes = pred["modes"]
    return EvalRecord(
        scenario_id=pred["scenario_id"],
        scores=np.asarray([m["score"] for m in modes], dtype=np.float64),
        traj_a=np.asarray([m["traj_A"] for m in modes], dtype=np.float64),
        traj_b=np.asarray([m["traj_B"] for m in modes], dtype=np.float64),
        gt_a=scenario.future(scenario.agent_a)[:, 1:3].copy(),
        gt_b=scenario.future(scenario.agent_b)[:, 1:3].copy(),
        box_a=(scenario.agent_a.box_length, scenario.agent_a.box_width),
        box_b=(scenario.agent_b.box_length, scenario.agent_b.box_width),
        last_heading_a=float(scenario.agent_a.states[scenario.t_obs - 1, 3]),
        last_heading_b=float(scenario.agent_b.states[scenario.t_obs - 1, 3]),
        scenario=scenario,
    )


# ---------------------------------------------------------------------------
# Displacement metrics
# ---------------------------------------------------------------------------

def min_ade(rec: EvalRecord) -> float:
    """Best-over-modes average displacement of the trajectory pair."""
    d_a = np.linalg.norm(rec.traj_a - rec.gt_a[None], axis=2)
    d_b = np.linalg.norm(rec.traj_b - rec.gt_b[None], axis=2)
    per_mode = (d_a.sum(axis=1) + d_b.sum(axis=1)) / (2.0 * rec.horizon)
    return float(per_mode.min())


def min_fde(rec: EvalRecord) -> float:
    """Best-over-modes final displacement of the trajectory pair."""
    d_a = np.linalg.norm(rec.traj_a[:, -1] - rec.gt_a[-1], axis=1)
    d_b = np.linalg.norm(rec.traj_b[:, -1] - rec.gt_b[-1], axis=1)
    return float(((d_a + d_b) / 2.0).min())


# ---------------------------------------------------------------------------
# Miss rate
# ---------------------------------------------------------------------------

@dataclass
class VelocityThresholds:
    """Lateral/longitudinal endpoint thresholds scaled by horizon and by the
    ground-truth final speed (implementation-chosen defaults, configurable)."""
    lat_short: float = 1.0       # at a 3 s horizon
    lon_short: float = 2.0
    lat_long: float = 3.0        # at an 8 s horizon
    lon_long: float = 6.0
    speed_low: float = 1.4
    speed_high: float = 11.0
    factor_low: float = 0.5

    def base(self, horizon_s: float) -> tuple[float, float]:
        t = min(max((horizon_s - 3.0) / 5.0, 0.0), 1.0)
        return (self.lat_short + t * (self.lat_long - self.lat_short),
                self.lon_short + t * (self.lon_long - self.lon_short))

    def speed_factor(self, v: float) -> float:
        t = min(max((v - self.speed_low) / (self.speed_high - self.speed_low),
                    0.0), 1.0)
        return self.factor_low + t * (1.0 - self.factor_low)


FIXED_MISS_THRESHOLD = 2.0


def _agent_miss_fixed(end_err: np.ndarray) -> np.ndarray:
    return np.linalg.norm(end_err, axis=-1) > FIXED_MISS_THRESHOLD


def _agent_miss_velocity(rec: EvalRecord, agent: str, end_err: np.ndarray,
                         vt: VelocityThresholds) -> np.ndarray:
    heading = rec.gt_final_heading(agent)
    c, s = math.cos(heading), math.sin(heading)
    lon = end_err[:, 0] * c + end_err[:, 1] * s
    lat = -end_err[:, 0] * s + end_err[:, 1] * c
    base_lat, base_lon = vt.base(rec.horizon * scene.DT)
    f = vt.speed_factor(rec.gt_final_speed(agent))
    return (np.abs(lat) > base_lat * f) | (np.abs(lon) > base_lon * f)


def mode_misses(rec: EvalRecord, regime: str = "fixed",
                vt: VelocityThresholds | None = None) -> np.ndarray:
    """Per-mode miss flags: a mode misses when either agent's endpoint falls
    outside its threshold."""
    err_a = rec.traj_a[:, -1] - rec.gt_a[-1]
    err_b = rec.traj_b[:, -1] - rec.gt_b[-1]
    if regime == "fixed":
        return _agent_miss_fixed(err_a) | _agent_miss_fixed(err_b)
    if regime == "velocity":
        vt = vt or VelocityThresholds()
        return (_agent_miss_velocity(rec, "A", err_a, vt)
                | _agent_miss_velocity(rec, "B", err_b, vt))
    raise ValueError(f"unknown miss regime {regime!r}")


def is_miss(rec: EvalRecord, regime: str = "fixed",
            vt: VelocityThresholds | None = None) -> bool:
    return bool(mode_misses(rec, regime, vt).all())


def miss_rate(records, regime: str = "fixed",
              vt: VelocityThresholds | None = None) -> float:
    records = list(records)
    if not records:
        raise ValueError("miss_rate needs at least one record")
    return float(np.mean([is_miss(r, regime, vt) for r in records]))


# ---------------------------------------------------------------------------
# Oriented boxes
# ---------------------------------------------------------------------------

@dataclass
class OrientedBox:
    x: float
    y: float
    heading: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        if self.length <= 0 or self.width <= 0:
            raise DegenerateBoxError(
                f"box extent must be positive, got {self.length} x {self.width}")
        c, s = math.cos(self.heading), math.sin(self.heading)
        d = np.array([c, s]) * (self.length / 2.0)
        n = np.array([-s, c]) * (self.width / 2.0)
        ctr = np.array([self.x, self.y])
        return np.array([ctr + d + n, ctr + d - n, ctr - d - n, ctr - d + n])

    @property
    def area(self) -> float:
        return self.length * self.width


def _clip_polygon(poly: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Keep the part of a convex polygon left of the directed edge a->b."""
    if len(poly) == 0:
        return poly
    edge = b - a
    side = edge[0] * (poly[:, 1] - a[1]) - edge[1] * (poly[:, 0] - a[0])
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        if side[i] >= 0:
            out.append(poly[i])
        if (side[i] > 0) != (side[j] > 0) and side[i] != side[j]:
            t = side[i] / (side[i] - side[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.asarray(out) if out else np.zeros((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    poly = a.corners()
    cb = b.corners()
    # corners are clockwise? ours are counter-clockwise: d+n, d-n, ... check
    # ordering by signed area and orient consistently
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    if _signed_area(cb) < 0:
        cb = cb[::-1]
    for i in range(4):
        poly = _clip_polygon(poly, cb[i], cb[(i + 1) % 4])
        if len(poly) == 0:
            return 0.0
    return _polygon_area(poly)


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def obb_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection-over-union of two rotated rectangles."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


# ---------------------------------------------------------------------------
# Overlap rate and cut-in rate
# ---------------------------------------------------------------------------

def trajectory_headings(traj: np.ndarray, first_heading: float) -> np.ndarray:
    """Per-step headings from consecutive points; the first step inherits the
    last observed heading, stationary steps keep the previous value."""
    n = len(traj)
    out = np.empty(n)
    prev = first_heading
    for i in range(n):
        if i + 1 < n:
            d = traj[i + 1] - traj[i]
        else:
            d = traj[i] - traj[i - 1] if n > 1 else np.zeros(2)
        if np.linalg.norm(d) > 1e-9:
            prev = math.atan2(d[1], d[0])
        out[i] = prev
    return out


OVERLAP_AREA_EPS = 1e-9


def is_overlap(rec: EvalRecord) -> bool:
    """Whether the top-scored pair's boxes intersect at any future step."""
    k = rec.best_mode()
    ta, tb = rec.traj_a[k], rec.traj_b[k]
    ha = trajectory_headings(ta, rec.last_heading_a)
    hb = trajectory_headings(tb, rec.last_heading_b)
    for i in range(len(ta)):
        box_a = OrientedBox(ta[i, 0], ta[i, 1], ha[i], *rec.box_a)
        box_b = OrientedBox(tb[i, 0], tb[i, 1], hb[i], *rec.box_b)
        if intersection_area(box_a, box_b) > OVERLAP_AREA_EPS:
            return True
    return False


def overlap_rate(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("overlap_rate needs at least one record")
    return float(np.mean([is_overlap(r) for r in records]))


def is_cut_in(rec: EvalRecord, snap_radius: float = scene.SNAP_RADIUS) -> bool:
    """Whether, in the top pair, both endpoints land on the same lane with B
    longitudinally ahead of A (arc length along that lane)."""
    if rec.scenario is None:
        raise ValueError("cut-in needs the scenario's lane graph")
    k = rec.best_mode()
    end_a, end_b = rec.traj_a[k, -1], rec.traj_b[k, -1]
    hit_a = scene.nearest_lane(rec.scenario, end_a, radius=snap_radius)
    hit_b = scene.nearest_lane(rec.scenario, end_b, radius=snap_radius)
    if hit_a is None or hit_b is None or hit_a[0] != hit_b[0]:
        return False
    return hit_b[1] > hit_a[1]


def cut_in_rate(records) -> float | None:
    """Cut-in frames over safety (non-overlapping) frames; None when no
    safety frames exist."""
    safety = [r for r in records if not is_overlap(r)]
    if not safety:
        return None
    return float(np.mean([is_cut_in(r) for r in safety]))


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------

def map_score(records, regime: str = "fixed",
              vt: VelocityThresholds | None = None) -> float:
    """Area under the precision-recall curve over all modes of all records,
    sorted by score. Within a record, only the first (by score, ties to the
    lower mode index) non-miss mode is a true positive."""
    records = list(records)
    rows = []  # (-score, record_order, mode_index, is_tp)
    for rec_order, rec in enumerate(records):
        misses = mode_misses(rec, regime, vt)
        order = np.lexsort((np.arange(rec.n_modes), -rec.scores))
        seen_tp = False
        for k in order:
            tp = (not misses[k]) and not seen_tp
            seen_tp = seen_tp or tp
            rows.append((-float(rec.scores[k]), rec_order, int(k), tp))
    if not rows:
        return 0.0
    rows.sort()
    flags = np.array([r[3] for r in rows], dtype=np.float64)
    tp_cum = np.cumsum(flags)
    precision = tp_cum / np.arange(1, len(rows) + 1)
    recall = tp_cum / len(records)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(rows)):
        if flags[i]:
            ap += (recall[i] - prev_recall) * envelope[i]
            prev_recall = recall[i]
    return float(ap)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

METRIC_NAMES = ("min_ade", "min_fde", "miss_rate", "overlap_rate",
                "cut_in_rate", "map")


def evaluate(records, regime: str = "fixed",
             vt: VelocityThresholds | None = None) -> dict:
    """All metrics over a record set; displacement metrics are means over
    records."""
    records = list(records)
    return {
        "min_ade": float(np.mean([min_ade(r) for r in records])),
        "min_fde": float(np.mean([min_fde(r) for r in records])),
        "miss_rate": miss_rate(records, regime, vt),
        "overlap_rate": overlap_rate(records),
        "cut_in_rate": cut_in_rate(records),
        "map": map_score(records, regime, vt),
    }


def write_metrics_csv(path, results: dict, regime: str) -> None:
    with open(path, "w") as fh:
        fh.write("metric,regime,value\n")
        for name in METRIC_NAMES:
            value = results[name]
            fh.write(f"{name},{regime},{'' if value is None else repr(value)}\n")
