"""Hierarchical context encoder over vectorized polylines.

Every scene element (agent history, future-lane path) becomes a polyline of
directed vectors. A shared per-layer mapping plus max-pooling over the other
vectors of the same polyline builds node features; pooling the final nodes
gives one local feature per polyline; self-attention across polylines adds a
global view. Agent and goal features concatenate these levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import scene

VECTOR_DIM = 8  # start xy, end xy, role one-hot (ego/context/lane), position attr

ROLE_EGO, ROLE_CONTEXT, ROLE_LANE = 0, 1, 2


def init_params(store: nm.ParameterStore, cfg) -> None:
    in_dim = VECTOR_DIM
    for layer in range(1, cfg.graph_layers + 1):
        out_dim = cfg.graph_width * (2 ** (layer - 1))
        nm.linear_params(store, f"enc.local.l{layer}", in_dim, out_dim)
        in_dim = 2 * out_dim
    d = cfg.local_dim
    for proj in ("q", "k", "v"):
        nm.linear_params(store, f"enc.att.{proj}", d, d)


def vectorize_polyline(points: np.ndarray, role: int, attrs: np.ndarray,
                       pos_scale: float) -> np.ndarray:
    """Connect consecutive key points into vector features; attrs holds one
    value per point (timestamp or arc position) and the vector takes its end
    point's attr. Fewer than 2 points give an empty (masked) polyline."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return np.zeros((0, VECTOR_DIM))
    n = len(points) - 1
    feats = np.zeros((n, VECTOR_DIM))
    feats[:, 0:2] = points[:-1] * pos_scale
    feats[:, 2:4] = points[1:] * pos_scale
    feats[:, 4 + role] = 1.0
    feats[:, 7] = attrs[1:]
    return feats


@dataclass
class AgentFrameEncoding:
    """Tape-bound features for one agent frame."""
    s_x: nm.Node                 # (2*local_dim,) agent structural feature
    goal_features: nm.Node       # (K, 3*local_dim), zero rows where masked
    goal_mask: np.ndarray        # (K,) candidates with a usable lane polyline
    poly_local: nm.Node          # (n_present, local_dim)
    poly_global: nm.Node         # (n_present, local_dim)
    poly_roles: list


def _history_polyline(track: scene.Track, t_obs: int, ref: scene.Pose,
                      role: int, pos_scale: float) -> np.ndarray:
    pts = scene.to_agent_frame(track.positions[:t_obs], ref)
    attrs = track.states[:t_obs, 0]
    return vectorize_polyline(pts, role, attrs, pos_scale)


def _lane_polylines(goals: scene.GoalCandidateSet, cfg):
    """Per-lane-slot vector matrices over consecutive goal candidates, and
    the goal -> vector-node binding (goal g maps to the vector ending at g,
    the first goal to the first vector)."""
    out = []
    g = cfg.goals_per_lane
    for p in range(cfg.max_lanes):
        sl = slice(p * g, (p + 1) * g)
        pts = goals.positions[sl][goals.mask[sl]]
        if len(pts) < 2:
            out.append((None, None))
            continue
        arcs = scene.GOAL_SPACING * np.arange(1, len(pts) + 1) * cfg.pos_scale
        feats = vectorize_polyline(pts, ROLE_LANE, arcs, cfg.pos_scale)
        node_of_goal = np.maximum(np.arange(len(pts)) - 1, 0)
        out.append((feats, node_of_goal))
    return out


def encode_local_graphs(tape: nm.Tape, cfg, matrices: list[np.ndarray]):
    """Run the shared graph layers over every polyline at once (segment ids
    separate them) and pool a local feature per polyline."""
    if not matrices:
        raise nm.ContractError("no polylines to encode")
    seg = np.repeat(np.arange(len(matrices)), [len(m) for m in matrices])
    x = tape.const(np.concatenate(matrices, axis=0))
    for layer in range(1, cfg.graph_layers + 1):
        f = nm.linear(tape, x, f"enc.local.l{layer}", norm_relu=True)
        pooled = nm.segment_maxpool_exclude_self(tape, f, seg)
        x = nm.concat(tape, [f, pooled], axis=1)
    local = nm.segment_maxpool(tape, x, seg, len(matrices))
    return x, seg, local


def global_interaction(tape: nm.Tape, h: nm.Node, mask: np.ndarray | None = None):
    """Self-attention over polyline features with residual and normalization;
    masked rows get zero attention weight and zero output."""
    q = nm.linear(tape, h, "enc.att.q")
    k = nm.linear(tape, h, "enc.att.k")
    v = nm.linear(tape, h, "enc.att.v")
    att = nm.scaled_dot_attention(tape, q, k, v, mask=mask)
    out = nm.layer_norm(tape, nm.add(tape, h, att))
    if mask is not None:
        out = nm.cmul(tape, out, np.asarray(mask, float)[:, None])
    return out


def encode_agent_frame(tape: nm.Tape, cfg, scenario: scene.Scenario, role: str,
                       goals: scene.GoalCandidateSet) -> AgentFrameEncoding:
    ref = scenario.ref_pose(role)
    matrices = [_history_polyline(scenario.agent(role), scenario.t_obs, ref,
                                  ROLE_EGO, cfg.pos_scale)]
    roles = [("ego", None)]
    slots, _ = scene.select_context_agents(scenario, role, cfg.context_slots)
    for track in slots:
        if track is None:
            continue
        feats = _history_polyline(track, scenario.t_obs, ref, ROLE_CONTEXT,
                                  cfg.pos_scale)
        if len(feats):
            matrices.append(feats)
            roles.append(("context", track.agent_id))

    lane_rows = {}
    lane_nodes = {}
    for p, (feats, node_of_goal) in enumerate(_lane_polylines(goals, cfg)):
        if feats is None:
            continue
        lane_rows[p] = len(matrices)
        lane_nodes[p] = node_of_goal
        matrices.append(feats)
        roles.append(("lane", p))

    nodes, seg, local = encode_local_graphs(tape, cfg, matrices)
    glob = global_interaction(tape, local)

    d = cfg.local_dim
    s_x = nm.reshape(tape, nm.concat(
        tape, [nm.gather_rows(tape, local, [0]), nm.gather_rows(tape, glob, [0])],
        axis=1), (2 * d,))

    seg_starts = np.concatenate([[0], np.cumsum([len(m) for m in matrices])])
    g = cfg.goals_per_lane
    blocks = []
    goal_mask = goals.mask.copy()
    for p in range(cfg.max_lanes):
        if p not in lane_rows:
            blocks.append(tape.const(np.zeros((g, 3 * d))))
            goal_mask[p * g: (p + 1) * g] = False
            continue
        row = lane_rows[p]
        node_feats = nm.narrow(tape, nodes, 0, int(seg_starts[row]),
                               int(seg_starts[row + 1] - seg_starts[row]))
        indiv = nm.gather_rows(tape, node_feats, lane_nodes[p])
        m = len(lane_nodes[p])
        loc = nm.tile_rows(tape, nm.reshape(tape, nm.gather_rows(tape, local, [row]), (d,)), m)
        glo = nm.tile_rows(tape, nm.reshape(tape, nm.gather_rows(tape, glob, [row]), (d,)), m)
        block = nm.concat(tape, [indiv, loc, glo], axis=1)
        if m < g:
            block = nm.concat(tape, [block, tape.const(np.zeros((g - m, 3 * d)))],
                              axis=0)
        blocks.append(block)
    goal_features = nm.concat(tape, blocks, axis=0)
    return AgentFrameEncoding(s_x=s_x, goal_features=goal_features,
                              goal_mask=goal_mask, poly_local=local,
                              poly_global=glob, poly_roles=roles)
