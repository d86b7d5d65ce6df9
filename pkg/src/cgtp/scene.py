"""Scenario data model and geometry: agent tracks, lane graphs, reference
frames, context selection, future-lane search, fine-grained goal sampling,
and a deterministic generator of two-agent interactive scenarios.

Conventions: world coordinates in meters, headings in radians wrapped to
(-pi, pi], tracks sampled at 10 Hz. Agent A is the influencer, agent B the
reactor; each agent's reference frame sits at its last observed pose.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

DT = 0.1
SNAP_RADIUS = 3.0
DFS_MAX_LENGTH = 120.0
GOAL_SPACING = 0.5
DEFAULT_BOX = (4.7, 2.1)

SCENARIO_KINDS = ("cut_in", "yielding", "merging", "left_turn")


class ScenarioError(ValueError):
    """A scenario violates a structural invariant."""


class LaneSnapError(ValueError):
    """No lane centerline within the snap radius of an agent position."""


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    return ((np.asarray(a) - np.pi) % (-2.0 * np.pi)) + np.pi


# ---------------------------------------------------------------------------
# Reference frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))


def to_agent_frame(points, ref: Pose):
    """World points (..., 2) into the frame anchored at ref."""
    p = np.asarray(points, dtype=np.float64)
    c, s = math.cos(ref.heading), math.sin(ref.heading)
    dx = p[..., 0] - ref.x
    dy = p[..., 1] - ref.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def to_world_frame(points, ref: Pose):
    """Inverse of to_agent_frame."""
    p = np.asarray(points, dtype=np.float64)
    c, s = math.cos(ref.heading), math.sin(ref.heading)
    x = c * p[..., 0] - s * p[..., 1] + ref.x
    y = s * p[..., 0] + c * p[..., 1] + ref.y
    return np.stack([x, y], axis=-1)


def pose_to_agent_frame(pose: Pose, ref: Pose) -> Pose:
    xy = to_agent_frame([pose.x, pose.y], ref)
    return Pose(xy[0], xy[1], pose.heading - ref.heading)


def pose_to_world_frame(pose: Pose, ref: Pose) -> Pose:
    xy = to_world_frame([pose.x, pose.y], ref)
    return Pose(xy[0], xy[1], pose.heading + ref.heading)


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------

@dataclass
class Track:
    agent_id: int
    states: np.ndarray          # (n, 5): t, x, y, heading, speed
    box_length: float = DEFAULT_BOX[0]
    box_width: float = DEFAULT_BOX[1]

    def validate(self):
        if self.states.ndim != 2 or self.states.shape[1] != 5:
            raise ScenarioError(f"track {self.agent_id}: bad state shape "
                                f"{self.states.shape}")
        if not np.all(np.diff(self.states[:, 0]) > 0):
            raise ScenarioError(f"track {self.agent_id}: timestamps not "
                                "strictly increasing")
        if self.box_length <= 0 or self.box_width <= 0:
            raise ScenarioError(f"track {self.agent_id}: non-positive box")
        if not np.all(np.isfinite(self.states)):
            raise ScenarioError(f"track {self.agent_id}: non-finite state")

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, 1:3]

    def pose_at(self, i: int) -> Pose:
        t, x, y, h, v = self.states[i]
        return Pose(x, y, h)


@dataclass
class Lane:
    lane_id: int
    centerline: np.ndarray      # (m, 2)
    successors: list[int] = field(default_factory=list)

    def validate(self):
        if len(self.centerline) < 2:
            raise ScenarioError(f"lane {self.lane_id}: fewer than 2 points")
        steps = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        if np.any(steps <= 0):
            raise ScenarioError(f"lane {self.lane_id}: repeated centerline point")


@dataclass
class Scenario:
    kind: str
    seed: int
    agent_a: Track
    agent_b: Track
    context: list[Track]
    lanes: dict[int, Lane]
    t_obs: int
    horizon: int

    @property
    def scenario_id(self) -> str:
        return f"{self.kind}-{self.seed}"

    @property
    def n_steps(self) -> int:
        return self.t_obs + self.horizon

    def agent(self, role: str) -> Track:
        return self.agent_a if role == "A" else self.agent_b

    def ref_pose(self, role: str) -> Pose:
        return self.agent(role).pose_at(self.t_obs - 1)

    def history(self, track: Track) -> np.ndarray:
        return track.states[: self.t_obs]

    def future(self, track: Track) -> np.ndarray:
        return track.states[self.t_obs:]

    def gt_endpoint(self, role: str) -> np.ndarray:
        return self.agent(role).positions[self.n_steps - 1].copy()

    def validate(self):
        if self.t_obs < 1 or self.horizon < 1:
            raise ScenarioError("t_obs and horizon must be positive")
        for track in (self.agent_a, self.agent_b):
            track.validate()
            if len(track.states) != self.n_steps:
                raise ScenarioError(
                    f"agent {track.agent_id}: {len(track.states)} states, "
                    f"expected {self.n_steps}")
        for track in self.context:
            track.validate()
        for lane in self.lanes.values():
            lane.validate()
            for succ in lane.successors:
                if succ not in self.lanes:
                    raise ScenarioError(
                        f"lane {lane.lane_id}: unresolvable successor {succ}")


# ---------------------------------------------------------------------------
# Context selection
# ---------------------------------------------------------------------------

def select_context_agents(scenario: Scenario, role: str, max_agents: int):
    """The up-to-`max_agents` context tracks nearest (at the last observed
    step) to the given interacting agent, plus a presence mask. Missing
    slots are None with mask False."""
    anchor = scenario.agent(role).positions[scenario.t_obs - 1]
    ranked = sorted(
        scenario.context,
        key=lambda tr: (float(np.linalg.norm(
            tr.positions[scenario.t_obs - 1] - anchor)), tr.agent_id),
    )[:max_agents]
    slots = list(ranked) + [None] * (max_agents - len(ranked))
    mask = np.array([t is not None for t in slots], dtype=bool)
    return slots, mask


# ---------------------------------------------------------------------------
# Polyline arc-length helpers
# ---------------------------------------------------------------------------

def cumulative_lengths(poly: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def point_at_arclength(poly: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    s = min(max(s, 0.0), cum[-1])
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(i, len(poly) - 2)
    seg = cum[i + 1] - cum[i]
    t = 0.0 if seg == 0 else (s - cum[i]) / seg
    return poly[i] * (1 - t) + poly[i + 1] * t


def tangent_at_arclength(poly: np.ndarray, cum: np.ndarray, s: float) -> float:
    s = min(max(s, 0.0), cum[-1])
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(poly) - 2)
    d = poly[i + 1] - poly[i]
    return math.atan2(d[1], d[0])


def project_to_polyline(poly: np.ndarray, point) -> tuple[float, float]:
    """(arc length of closest point, distance to it)."""
    p = np.asarray(point, dtype=np.float64)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(denom, 1e-12), 0.0, 1.0)
    closest = a + t[:, None] * ab
    dists = np.linalg.norm(closest - p, axis=1)
    i = int(dists.argmin())
    cum = cumulative_lengths(poly)
    return float(cum[i] + t[i] * math.sqrt(denom[i])), float(dists[i])


# ---------------------------------------------------------------------------
# Lane search and goal sampling
# ---------------------------------------------------------------------------

@dataclass
class LanePath:
    lane_ids: list[int]
    points: np.ndarray          # (m, 2) world, starting at the agent projection
    cum: np.ndarray
    lane_end_s: np.ndarray      # arc position where each chained lane ends

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def lane_id_at(self, s: float) -> int:
        """Lane owning the given arc-length position along the path."""
        i = int(np.searchsorted(self.lane_end_s, min(s, self.length)))
        return self.lane_ids[min(i, len(self.lane_ids) - 1)]


def nearest_lane(scenario: Scenario, point, radius: float = SNAP_RADIUS):
    """(lane_id, arc position, distance) of the closest lane within radius,
    or None. Ties broken by lower lane id."""
    best = None
    for lane_id in sorted(scenario.lanes):
        s, d = project_to_polyline(scenario.lanes[lane_id].centerline, point)
        if d <= radius and (best is None or d < best[2] - 1e-12):
            best = (lane_id, s, d)
    return best


def enumerate_future_lanes(scenario: Scenario, role: str,
                           max_paths: int,
                           max_length: float = DFS_MAX_LENGTH,
                           snap_radius: float = SNAP_RADIUS) -> list[LanePath]:
    """Depth-first search over lane successors from the lane the agent
    currently occupies, emitting up to max_paths root-to-limit paths in
    ascending-successor order. Each path polyline starts at the agent's
    projection onto its lane."""
    pos = scenario.agent(role).positions[scenario.t_obs - 1]
    snapped = nearest_lane(scenario, pos, radius=snap_radius)
    if snapped is None:
        raise LaneSnapError(
            f"scenario {scenario.scenario_id}: agent {role} at "
            f"({pos[0]:.2f}, {pos[1]:.2f}) has no lane within {snap_radius} m")
    root_id, s_root, _ = snapped

    paths: list[list[int]] = []

    def dfs(lane_id: int, length: float, chain: list[int]):
        if len(paths) >= max_paths:
            return
        lane = scenario.lanes[lane_id]
        lane_len = cumulative_lengths(lane.centerline)[-1]
        total = length + (lane_len if chain else lane_len - s_root)
        grown = chain + [lane_id]
        succs = [s for s in sorted(lane.successors) if s not in grown]
        if total >= max_length or not succs:
            paths.append(grown)
            return
        for succ in succs:
            dfs(succ, total, grown)

    dfs(root_id, 0.0, [])

    out = []
    for chain in paths:
        pts: list[np.ndarray] = []
        lane_ends = []
        for j, lane_id in enumerate(chain):
            line = scenario.lanes[lane_id].centerline
            if j == 0 and s_root > 0:
                cum = cumulative_lengths(line)
                start = point_at_arclength(line, cum, s_root)
                keep = line[cum > s_root + 1e-9]
                line = np.vstack([start[None, :], keep]) if len(keep) else start[None, :]
            if pts and len(line) and np.linalg.norm(line[0] - pts[-1]) < 1e-9:
                line = line[1:]
            pts.extend(line)
            lane_ends.append(cumulative_lengths(np.asarray(pts))[-1] if len(pts) > 1 else 0.0)
        poly = np.asarray(pts)
        out.append(LanePath(lane_ids=chain, points=poly,
                            cum=cumulative_lengths(poly),
                            lane_end_s=np.asarray(lane_ends)))
    return out


@dataclass
class GoalCandidateSet:
    """Fine-grained goal candidates for one agent: P path slots times
    `goals_per_lane` positions spaced GOAL_SPACING apart in arc length.
    Slot layout is path-major; unrealized slots are masked."""
    agent_id: int
    positions: np.ndarray       # (K, 2) agent frame
    world: np.ndarray           # (K, 2) world frame
    mask: np.ndarray            # (K,) bool
    source_lane: np.ndarray     # (K,) lane id, -1 where masked
    path_index: np.ndarray      # (K,) path slot, -1 where masked
    offsets_gt: np.ndarray      # (K, 2) true endpoint minus candidate, agent frame
    goals_per_lane: int

    @property
    def size(self) -> int:
        return len(self.positions)


def sample_goal_candidates(scenario: Scenario, role: str, paths: list[LanePath],
                           max_paths: int, goals_per_lane: int,
                           spacing: float = GOAL_SPACING) -> GoalCandidateSet:
    track = scenario.agent(role)
    ref = scenario.ref_pose(role)
    k_total = max_paths * goals_per_lane
    world = np.zeros((k_total, 2))
    mask = np.zeros(k_total, dtype=bool)
    source = np.full(k_total, -1, dtype=np.int64)
    path_idx = np.full(k_total, -1, dtype=np.int64)
    for p, path in enumerate(paths[:max_paths]):
        for g in range(goals_per_lane):
            s = spacing * (g + 1)
            if s > path.length + 1e-9:
                break
            k = p * goals_per_lane + g
            world[k] = point_at_arclength(path.points, path.cum, s)
            source[k] = path.lane_id_at(s)
            path_idx[k] = p
            mask[k] = True
    positions = to_agent_frame(world, ref)
    positions[~mask] = 0.0
    endpoint = to_agent_frame(scenario.gt_endpoint(role), ref)
    offsets = np.where(mask[:, None], endpoint[None, :] - positions, 0.0)
    return GoalCandidateSet(
        agent_id=track.agent_id, positions=positions, world=world, mask=mask,
        source_lane=source, path_index=path_idx, offsets_gt=offsets,
        goals_per_lane=goals_per_lane)


# ---------------------------------------------------------------------------
# Synthetic scenario generation
# ---------------------------------------------------------------------------

def _straight(p0, p1, step=2.0) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return p0 * (1 - t) + p1 * t


def _hermite(p0, d0, p1, d1, n=30) -> np.ndarray:
    """Cubic blend between two directed endpoints (tangents scaled by the
    endpoint distance); used for lane-change connectors and turn arcs."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    scale = np.linalg.norm(p1 - p0)
    m0 = np.asarray(d0, float) / np.linalg.norm(d0) * scale
    m1 = np.asarray(d1, float) / np.linalg.norm(d1) * scale
    t = np.linspace(0.0, 1.0, n)[:, None]
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


def _speed_profile(v0: float, segments, n_steps: int, v_min=0.3, v_max=20.0):
    """Integrate piecewise-constant accelerations: (speeds, distances) at
    10 Hz, speeds clipped into [v_min, v_max]."""
    accel = np.zeros(n_steps)
    k = 0
    for dur, a in segments:
        steps = int(round(dur / DT))
        accel[k: k + steps] = a
        k += steps
    v = np.empty(n_steps)
    s = np.empty(n_steps)
    cur_v, cur_s = float(v0), 0.0
    for i in range(n_steps):
        v[i], s[i] = cur_v, cur_s
        nxt = min(max(cur_v + accel[i] * DT, v_min), v_max)
        cur_s += 0.5 * (cur_v + nxt) * DT
        cur_v = nxt
    return v, s


def _track_on_path(agent_id, path_pts, s0, v0, segments, n_steps, box):
    cum = cumulative_lengths(path_pts)
    v, dist = _speed_profile(v0, segments, n_steps)
    states = np.empty((n_steps, 5))
    for i in range(n_steps):
        s = s0 + dist[i]
        x, y = point_at_arclength(path_pts, cum, s)
        states[i] = (i * DT, x, y,
                     wrap_angle(tangent_at_arclength(path_pts, cum, s)), v[i])
    return Track(agent_id=agent_id, states=states,
                 box_length=box[0], box_width=box[1])


def _box(rng):
    return (4.5 + 0.4 * rng.random(), 2.0 + 0.2 * rng.random())


def _lane_dict(items) -> dict[int, Lane]:
    return {i: Lane(lane_id=i, centerline=np.asarray(c, float), successors=list(s))
            for i, c, s in items}


def _parallel_pair_lanes(y1: float, merge_x: float):
    """Two parallel lanes with a lane-change connector from lane 1 into
    lane 0, used by the cut-in and yielding kinds."""
    return _lane_dict([
        (0, _straight((-60, 0), (0, 0)), [1]),
        (1, _straight((0, 0), (merge_x, 0)), [2]),
        (2, _straight((merge_x, 0), (120, 0)), []),
        (3, _straight((-60, y1), (0, y1)), [4, 6]),
        (4, _straight((0, y1), (60, y1)), [5]),
        (5, _straight((60, y1), (120, y1)), []),
        (6, _hermite((0, y1), (1, 0), (merge_x, 0), (1, 0)), [2]),
    ])


def _route(lanes: dict[int, Lane], ids) -> np.ndarray:
    pts = []
    for lane_id in ids:
        line = lanes[lane_id].centerline
        if pts and np.linalg.norm(line[0] - pts[-1]) < 1e-9:
            line = line[1:]
        pts.extend(line)
    return np.asarray(pts)


def _context_cruisers(lanes, specs, n_steps, rng, first_id=2):
    out = []
    for j, (route_ids, s0, v0) in enumerate(specs):
        out.append(_track_on_path(first_id + j, _route(lanes, route_ids),
                                  s0, v0, [], n_steps, _box(rng)))
    return out


def _build_cut_in(rng, t_obs, horizon):
    n = t_obs + horizon
    y1 = 3.3 + 0.2 * rng.random()
    merge_x = 14.0 + 1.5 * rng.random()
    lanes = _parallel_pair_lanes(y1, merge_x)
    hist = (t_obs - 1) * DT

    v_a = 6.6 + 0.4 * rng.random()
    v_b = v_a + 0.3 + 0.3 * rng.random()
    gap = 5.5 + 1.0 * rng.random()
    # B sweeps from lane 1 through the connector ahead of A in lane 0
    route_b = _route(lanes, [3, 6, 2])
    s_b = (60.0 - 1.5) - v_b * hist          # lane 3 starts 60 m behind x=0
    b = _track_on_path(1, route_b, s_b, v_b,
                       [(hist, 0.0), (4.0, 0.15 + 0.15 * rng.random())],
                       n, _box(rng))
    route_a = _route(lanes, [0, 1, 2])
    s_a = (60.0 - 1.5 - gap) - v_a * hist
    a = _track_on_path(0, route_a, s_a, v_a,
                       [(hist, 0.0), (4.0, -(0.1 + 0.1 * rng.random()))],
                       n, _box(rng))
    ctx = _context_cruisers(
        lanes,
        [([3, 4, 5], 60.0 + 25 + 10 * rng.random() - 7.0 * hist, 7.0),
         ([0, 1, 2], 60.0 - 32 - 6 * rng.random() - 6.8 * hist, 6.8)][: 1 + int(rng.random() < 0.7)],
        n, rng)
    return a, b, ctx, lanes


def _build_yielding(rng, t_obs, horizon):
    n = t_obs + horizon
    y1 = 3.3 + 0.2 * rng.random()
    merge_x = 14.0 + 1.5 * rng.random()
    lanes = _parallel_pair_lanes(y1, merge_x)
    hist = (t_obs - 1) * DT

    # A cuts from lane 1 into lane 0; B holds lane 0 and gives way
    v_a = 6.6 + 0.4 * rng.random()
    a = _track_on_path(0, _route(lanes, [3, 6, 2]),
                       (60.0 - 1.5) - v_a * hist, v_a,
                       [(hist, 0.0), (4.0, 0.1 + 0.2 * rng.random())],
                       n, _box(rng))
    v_b = 7.0 + 0.5 * rng.random()
    gap_b = 5.0 + 3.0 * rng.random()
    b = _track_on_path(1, _route(lanes, [0, 1, 2]),
                       (60.0 - 1.5 - gap_b) - v_b * hist, v_b,
                       [(hist, 0.0), (4.0, -(1.1 + 0.4 * rng.random()))],
                       n, _box(rng))
    ctx = _context_cruisers(
        lanes, [([3, 4, 5], 60.0 + 28 + 8 * rng.random() - 7.2 * hist, 7.2)],
        n, rng) if rng.random() < 0.8 else []
    return a, b, ctx, lanes


def _merge_ramp() -> np.ndarray:
    x = np.linspace(-55.0, 0.0, 34)
    y = -11.0 * (x / 55.0) ** 2
    return np.stack([x, y], axis=1)


def _build_merging(rng, t_obs, horizon):
    n = t_obs + horizon
    lanes = _lane_dict([
        (0, _straight((-60, 0), (0, 0)), [1]),
        (1, _straight((0, 0), (60, 0)), [2, 3]),
        (2, _straight((60, 0), (120, 0)), []),
        (3, _hermite((60, 0), (1, 0), (90, 3.5), (1, 0)), [4]),
        (4, _straight((90, 3.5), (120, 3.5)), []),
        (5, _merge_ramp(), [1]),
    ])
    hist = (t_obs - 1) * DT
    ramp_len = cumulative_lengths(lanes[5].centerline)[-1]

    v_b = 6.6 + 0.4 * rng.random()
    back = 9.5 + 1.0 * rng.random()          # arc distance to the junction
    b = _track_on_path(1, _route(lanes, [5, 1, 2]),
                       (ramp_len - back) - v_b * hist, v_b,
                       [(hist, 0.0), (4.0, 0.15 + 0.2 * rng.random())],
                       n, _box(rng))
    v_a = v_b + 0.4 + 0.4 * rng.random()
    gap = 6.5 + 1.0 * rng.random()
    a = _track_on_path(0, _route(lanes, [0, 1, 2]),
                       (60.0 - back - gap) - v_a * hist, v_a,
                       [(hist, 0.0), (4.0, -(0.2 + 0.15 * rng.random()))],
                       n, _box(rng))
    ctx = _context_cruisers(
        lanes, [([0, 1, 2], 60.0 - 30 - 8 * rng.random() - 6.5 * hist, 6.5)],
        n, rng) if rng.random() < 0.7 else []
    return a, b, ctx, lanes


def _build_left_turn(rng, t_obs, horizon):
    n = t_obs + horizon
    y1 = 3.4
    lanes = _lane_dict([
        (0, _straight((-70, 0), (-8, 0)), [1]),
        (1, _straight((-8, 0), (70, 0)), []),
        (2, _straight((70, y1), (8, y1)), [3, 4]),
        (3, _straight((8, y1), (-70, y1)), []),
        (4, _hermite((8, y1), (-1, 0), (-1.75, -8), (0, -1)), [5]),
        (5, _straight((-1.75, -8), (-1.75, -70)), []),
    ])
    hist = (t_obs - 1) * DT

    v_a = 8.0 + 0.3 * rng.random()
    a = _track_on_path(0, _route(lanes, [0, 1]),
                       (70.0 - 0.5 - 1.5 * rng.random()) - v_a * hist, v_a,
                       [(hist, 0.0), (4.0, -(0.1 + 0.1 * rng.random()))],
                       n, _box(rng))
    v_b = 4.6 + 0.4 * rng.random()
    b = _track_on_path(1, _route(lanes, [2, 4, 5]),
                       (70.0 - 10.5 - rng.random()) - v_b * hist, v_b,
                       [(hist, 0.0), (1.6, -(1.1 + 0.2 * rng.random())),
                        (2.4, 0.5 + 0.3 * rng.random())],
                       n, _box(rng))
    ctx = _context_cruisers(
        lanes, [([2, 3], 70.0 + 25 + 10 * rng.random() - 6.0 * hist, 6.0)],
        n, rng) if rng.random() < 0.7 else []
    return a, b, ctx, lanes


_BUILDERS = {
    "cut_in": _build_cut_in,
    "yielding": _build_yielding,
    "merging": _build_merging,
    "left_turn": _build_left_turn,
}


def generate_synthetic_scenario(kind: str, seed: int, t_obs: int = 20,
                                horizon: int = 30) -> Scenario:
    """Deterministic two-agent interactive scenario of the given kind."""
    if kind not in _BUILDERS:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    rng = np.random.default_rng([zlib.crc32(kind.encode()), seed])
    a, b, ctx, lanes = _BUILDERS[kind](rng, t_obs, horizon)
    scenario = Scenario(kind=kind, seed=seed, agent_a=a, agent_b=b,
                        context=ctx, lanes=lanes, t_obs=t_obs, horizon=horizon)
    scenario.validate()
    return scenario


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------

def _track_to_json(track: Track) -> dict:
    return {
        "id": int(track.agent_id),
        "box": [float(track.box_length), float(track.box_width)],
        "states": [[float(v) for v in row] for row in track.states],
    }


def _track_from_json(d: dict) -> Track:
    return Track(agent_id=int(d["id"]),
                 states=np.asarray(d["states"], dtype=np.float64),
                 box_length=float(d["box"][0]), box_width=float(d["box"][1]))


def scenario_to_json(s: Scenario) -> str:
    obj = {
        "kind": s.kind,
        "seed": int(s.seed),
        "t_obs": int(s.t_obs),
        "horizon": int(s.horizon),
        "roles": {"A": int(s.agent_a.agent_id), "B": int(s.agent_b.agent_id)},
        "agents": [_track_to_json(t) for t in (s.agent_a, s.agent_b, *s.context)],
        "lanes": [
            {"id": int(l.lane_id),
             "centerline": [[float(x), float(y)] for x, y in l.centerline],
             "successors": [int(v) for v in l.successors]}
            for l in (s.lanes[i] for i in sorted(s.lanes))
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def scenario_from_json(line: str) -> Scenario:
    d = json.loads(line)
    tracks = {t["id"]: _track_from_json(t) for t in d["agents"]}
    id_a, id_b = int(d["roles"]["A"]), int(d["roles"]["B"])
    context = [tracks[t["id"]] for t in d["agents"]
               if t["id"] not in (id_a, id_b)]
    lanes = {int(l["id"]): Lane(lane_id=int(l["id"]),
                                centerline=np.asarray(l["centerline"], float),
                                successors=[int(v) for v in l["successors"]])
             for l in d["lanes"]}
    s = Scenario(kind=d["kind"], seed=int(d["seed"]), agent_a=tracks[id_a],
                 agent_b=tracks[id_b], context=context, lanes=lanes,
                 t_obs=int(d["t_obs"]), horizon=int(d["horizon"]))
    s.validate()
    return s


def write_scenarios(path, scenarios) -> None:
    with open(path, "w") as fh:
        for s in scenarios:
            fh.write(scenario_to_json(s) + "\n")


def read_scenarios(path) -> list[Scenario]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(scenario_from_json(line))
            except (KeyError, ValueError, TypeError) as err:
                raise ScenarioError(
                    f"{path}: malformed scenario on line {lineno}: {err}") from err
    return out
