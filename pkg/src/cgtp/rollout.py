"""Goal-oriented trajectory decoding for an interacting pair.

A bidirectional GRU summarizes each agent's observed history; a shared
unidirectional GRU decoder then rolls both agents forward in lockstep, each
step consuming the partner's previous point (transformed into the agent's own
frame), the agent's goal anchor, and its encoded context. Teacher-forced mode
substitutes ground truth for both the cross-fed point and the goal anchor;
free-running mode feeds the model its own emissions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import scene

HISTORY_DIM = 4  # x, y, heading, speed in the agent frame


def init_params(store: nm.ParameterStore, cfg) -> None:
    h = cfg.gru_hidden
    in_dim = HISTORY_DIM
    for layer in range(1, cfg.gru_layers + 1):
        for direction in ("fwd", "bwd"):
            nm.gru_params(store, f"enc.gru.l{layer}.{direction}", in_dim, h)
        in_dim = 2 * h
    dec_in = 2 + 2 + cfg.agent_feature_dim + 2 * h
    for layer in range(1, cfg.gru_layers + 1):
        nm.gru_params(store, f"dec.gru.l{layer}", dec_in, h)
        nm.linear_params(store, f"dec.init.l{layer}", 2 * h, h)
        dec_in = h
    nm.linear_params(store, "dec.traj", h, 2)


def _history_features(scenario: scene.Scenario, role: str, cfg) -> np.ndarray:
    track = scenario.agent(role)
    ref = scenario.ref_pose(role)
    hist = scenario.history(track)
    pts = scene.to_agent_frame(hist[:, 1:3], ref) * cfg.pos_scale
    heading = scene.wrap_angle(hist[:, 3] - ref.heading)
    speed = hist[:, 4] * cfg.pos_scale
    return np.concatenate([pts, heading[:, None], speed[:, None]], axis=1)


def _encode_history_batch(tape: nm.Tape, cfg, feats_list: list[np.ndarray]):
    """Bidirectional multi-layer GRU over several equal-length histories at
    once (rows interleave agents x directions); returns one summary vector
    per history: concatenated final forward/backward top-layer states."""
    steps = len(feats_list[0])
    if steps < 1:
        raise nm.ContractError("empty history")
    n, h = len(feats_list), cfg.gru_hidden
    # step batch rows: (agent0 fwd, agent0 bwd, agent1 fwd, ...); the forward
    # direction reads position t, the backward direction reads steps-1-t
    seq = [tape.const(np.stack(
        [f[p] for f in feats_list for p in (t, steps - 1 - t)]))
        for t in range(steps)]
    fwd_rows = np.arange(n) * 2
    bwd_rows = fwd_rows + 1
    for layer in range(1, cfg.gru_layers + 1):
        hid_f = tape.const(np.zeros((n, h)))
        hid_b = tape.const(np.zeros((n, h)))
        outs = []
        for t in range(steps):
            hid_f = nm.gru_cell(tape, nm.gather_rows(tape, seq[t], fwd_rows),
                                hid_f, f"enc.gru.l{layer}.fwd")
            hid_b = nm.gru_cell(tape, nm.gather_rows(tape, seq[t], bwd_rows),
                                hid_b, f"enc.gru.l{layer}.bwd")
            outs.append(nm.concat(tape, [hid_f, hid_b], axis=0))
        if layer == cfg.gru_layers:
            break
        # outs[t] rows: n forward states (position t), n backward states
        # (position steps-1-t); stack once, then gather per-position pairs
        allout = nm.concat(tape, outs, axis=0)

        def row_fwd(t, i):
            return 2 * n * t + i                    # forward output at position t

        def row_bwd(t, i):
            return 2 * n * (steps - 1 - t) + n + i  # backward output at position t

        seq = []
        for t in range(steps):
            f_idx = [row_fwd(p, i) for i in range(n) for p in (t, steps - 1 - t)]
            b_idx = [row_bwd(p, i) for i in range(n) for p in (t, steps - 1 - t)]
            seq.append(nm.concat(tape, [nm.gather_rows(tape, allout, f_idx),
                                        nm.gather_rows(tape, allout, b_idx)],
                                 axis=1))
    final = nm.concat(tape, [hid_f, hid_b], axis=1)   # (n, 2h)
    return [nm.reshape(tape, nm.gather_rows(tape, final, [i]), (2 * h,))
            for i in range(n)]


def encode_history(tape: nm.Tape, cfg, scenario: scene.Scenario, role: str) -> nm.Node:
    """History summary for a single agent."""
    return _encode_history_batch(
        tape, cfg, [_history_features(scenario, role, cfg)])[0]


def encode_histories(tape: nm.Tape, cfg, scenario: scene.Scenario):
    """History summaries for both interacting agents in one batched pass."""
    feats = [_history_features(scenario, role, cfg) for role in ("A", "B")]
    return _encode_history_batch(tape, cfg, feats)


@dataclass
class RolloutResult:
    steps_a: list                 # per future step, Node (M, 2) in A's frame
    steps_b: list                 # per future step, Node (M, 2) in B's frame
    n_modes: int

    def trajectories(self, role: str) -> np.ndarray:
        """(M, T, 2) emitted points in the agent's own frame."""
        steps = self.steps_a if role == "A" else self.steps_b
        return np.stack([s.data for s in steps], axis=1)


def rollout_joint(tape: nm.Tape, cfg, scenario: scene.Scenario,
                  s_x_a: nm.Node, s_x_b: nm.Node, u_a: nm.Node, u_b: nm.Node,
                  goals_a: np.ndarray, goals_b: np.ndarray, mode: str,
                  perturb=None) -> RolloutResult:
    """Synchronized step-wise decoding of both agents over the horizon.

    goals_* are (M, 2) goal anchors in each agent's own frame, one row per
    joint mode; teacher_forced mode overrides them with the true endpoints
    and cross-feeds ground-truth partner states, free_running cross-feeds the
    previous emissions. perturb(role, step, points) may rewrite the
    propagated points after emission (testing hook)."""
    horizon = scenario.horizon
    if horizon <= 0:
        raise nm.ContractError("rollout horizon must be positive")
    if mode not in ("teacher_forced", "free_running"):
        raise nm.ContractError(f"unknown rollout mode {mode!r}")
    ref_a, ref_b = scenario.ref_pose("A"), scenario.ref_pose("B")
    teacher = mode == "teacher_forced"
    if teacher:
        goals_a = scene.to_agent_frame(scenario.gt_endpoint("A"), ref_a)[None, :]
        goals_b = scene.to_agent_frame(scenario.gt_endpoint("B"), ref_b)[None, :]
    goals_a = np.atleast_2d(goals_a)
    goals_b = np.atleast_2d(goals_b)
    m = len(goals_a)

    hidden = []
    for layer in range(1, cfg.gru_layers + 1):
        init_a = nm.tile_rows(tape, nm.linear(tape, u_a, f"dec.init.l{layer}"), m)
        init_b = nm.tile_rows(tape, nm.linear(tape, u_b, f"dec.init.l{layer}"), m)
        hidden.append(nm.concat(tape, [init_a, init_b], axis=0))

    ctx_a = nm.concat(tape, [tape.const(goals_a * cfg.pos_scale),
                             nm.tile_rows(tape, s_x_a, m),
                             nm.tile_rows(tape, u_a, m)], axis=1)
    ctx_b = nm.concat(tape, [tape.const(goals_b * cfg.pos_scale),
                             nm.tile_rows(tape, s_x_b, m),
                             nm.tile_rows(tape, u_b, m)], axis=1)
    ctx = nm.concat(tape, [ctx_a, ctx_b], axis=0)

    gt_a = scenario.future(scenario.agent_a)[:, 1:3]
    gt_b = scenario.future(scenario.agent_b)[:, 1:3]
    prev_a_world = np.tile(scenario.agent_a.positions[scenario.t_obs - 1], (m, 1))
    prev_b_world = np.tile(scenario.agent_b.positions[scenario.t_obs - 1], (m, 1))

    steps_a, steps_b = [], []
    for step in range(horizon):
        cross_a = scene.to_agent_frame(prev_b_world, ref_a) * cfg.pos_scale
        cross_b = scene.to_agent_frame(prev_a_world, ref_b) * cfg.pos_scale
        cross = tape.const(np.concatenate([cross_a, cross_b], axis=0))
        x = nm.concat(tape, [cross, ctx], axis=1)
        for layer in range(1, cfg.gru_layers + 1):
            hidden[layer - 1] = nm.gru_cell(tape, x, hidden[layer - 1],
                                            f"dec.gru.l{layer}")
            x = hidden[layer - 1]
        emit = nm.scale(tape, nm.linear(tape, x, "dec.traj"), 1.0 / cfg.pos_scale)
        out_a = nm.narrow(tape, emit, 0, 0, m)
        out_b = nm.narrow(tape, emit, 0, m, m)
        steps_a.append(out_a)
        steps_b.append(out_b)
        if teacher:
            prev_a_world = np.tile(gt_a[step], (m, 1))
            prev_b_world = np.tile(gt_b[step], (m, 1))
        else:
            pts_a, pts_b = out_a.data, out_b.data
            if perturb is not None:
                pts_a = perturb("A", step, pts_a.copy())
                pts_b = perturb("B", step, pts_b.copy())
            prev_a_world = scene.to_world_frame(pts_a, ref_a)
            prev_b_world = scene.to_world_frame(pts_b, ref_b)
    return RolloutResult(steps_a=steps_a, steps_b=steps_b, n_modes=m)
