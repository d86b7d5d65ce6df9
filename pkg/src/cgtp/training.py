"""Loss construction, target building, the staged training loop, checkpoint
and log serialization, and free-running inference.

Per batch one forward pass produces all four losses; each loss is then
backpropagated separately and applied with Adam restricted to its declared
parameter group, in order: A's marginal goal loss, B's conditional goal loss,
the joint (interactive) goal loss, and the trajectory loss.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import encoder, goals, model, numerics as nm, rollout, scene


class TrainingDiverged(RuntimeError):
    """A non-finite loss appeared; message names the offending scenarios."""


@dataclass
class TrainConfig:
    lr: float = 5e-3
    decay_every: int = 30
    decay_factor: float = 0.5
    batch_size: int = 64
    epochs: int = 200
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise nm.ConfigError("lr and batch_size must be positive, epochs >= 0")


LOSS_KEYS = ("goal_a", "goal_b", "joint", "traj")

# Algorithm stage -> (loss, parameter groups updated by that stage)
STAGES = (
    ("goal_a", ("encoder", "seg_a", "reg_a")),
    ("goal_b", ("encoder", "seg_b", "reg_b")),
    ("joint", ("encoder", "seg_a", "seg_b")),
    ("traj", ("encoder", "enc_gru", "dec_gru", "traj_head")),
)


# ---------------------------------------------------------------------------
# Preprocessing (static per scenario)
# ---------------------------------------------------------------------------

@dataclass
class Preprocessed:
    scenario: scene.Scenario
    goals_a: scene.GoalCandidateSet
    goals_b: scene.GoalCandidateSet
    mask_a: np.ndarray
    mask_b: np.ndarray
    dist_a: np.ndarray           # candidate-to-true-endpoint distances, inf masked
    dist_b: np.ndarray
    gt_fut_a: np.ndarray         # (T, 2) future positions, A's frame
    gt_fut_b: np.ndarray


def effective_goal_mask(goal_set: scene.GoalCandidateSet, cfg) -> np.ndarray:
    """Candidates whose lane slot yields a usable polyline (>= 2 points)."""
    mask = goal_set.mask.copy()
    g = cfg.goals_per_lane
    for p in range(cfg.max_lanes):
        sl = slice(p * g, (p + 1) * g)
        if mask[sl].sum() < 2:
            mask[sl] = False
    return mask


def preprocess(cfg, scenario: scene.Scenario) -> Preprocessed:
    sets, masks, dists, futs = {}, {}, {}, {}
    for role in ("A", "B"):
        paths = scene.enumerate_future_lanes(scenario, role, cfg.max_lanes)
        gset = scene.sample_goal_candidates(scenario, role, paths,
                                            cfg.max_lanes, cfg.goals_per_lane)
        mask = effective_goal_mask(gset, cfg)
        d = np.linalg.norm(gset.offsets_gt, axis=1)
        d[~mask] = np.inf
        ref = scenario.ref_pose(role)
        fut = scene.to_agent_frame(scenario.future(scenario.agent(role))[:, 1:3], ref)
        sets[role], masks[role], dists[role], futs[role] = gset, mask, d, fut
    return Preprocessed(scenario=scenario, goals_a=sets["A"], goals_b=sets["B"],
                        mask_a=masks["A"], mask_b=masks["B"],
                        dist_a=dists["A"], dist_b=dists["B"],
                        gt_fut_a=futs["A"], gt_fut_b=futs["B"])


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------

@dataclass
class GoalTargets:
    k_a: np.ndarray              # candidate indices nearest A's true endpoint
    k_b: np.ndarray
    k_joint: int                 # 1-based joint mode index over the pair grid


def nearest_candidates(dist: np.ndarray, top_k: int) -> np.ndarray:
    order = np.argsort(dist, kind="stable")
    return order[: min(top_k, int(np.isfinite(dist).sum()))].astype(np.int64)


def build_goal_targets(prep: Preprocessed, pairs: goals.GoalPairSet,
                       top_k: int) -> GoalTargets:
    """K_A / K_B are each agent's closest candidates to its true endpoint;
    the joint target is the pair-grid cell whose two candidates jointly
    minimize the summed endpoint distances (ties to the lower index)."""
    grid = prep.dist_a[pairs.q_index] + prep.dist_b[pairs.k_index]
    return GoalTargets(k_a=nearest_candidates(prep.dist_a, top_k),
                       k_b=nearest_candidates(prep.dist_b, top_k),
                       k_joint=int(grid.argmin()) + 1)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def goal_loss_marginal(tape: nm.Tape, dist: goals.GoalDistribution,
                       target_idx: np.ndarray, gt_offsets: np.ndarray,
                       mask: np.ndarray) -> nm.Node:
    """Per-candidate binary cross entropy against membership in the target
    set, plus squared offset error toward the indicator-gated true offset;
    averaged over unmasked candidates."""
    k = len(mask)
    m = int(mask.sum())
    indicator = np.zeros(k)
    indicator[target_idx] = 1.0
    bce = nm.bce_terms(tape, dist.probs, indicator)
    se = nm.squared_error(tape, dist.offsets,
                          tape.const(indicator[:, None] * gt_offsets))
    total = nm.add(tape, nm.sum_all(tape, nm.cmul(tape, bce, mask.astype(float))),
                   nm.sum_all(tape, nm.cmul(tape, se, mask.astype(float)[:, None])))
    return nm.scale(tape, total, 1.0 / m)


def goal_loss_conditional(tape: nm.Tape, dists: list, target_idx: np.ndarray,
                          gt_offsets: np.ndarray, mask: np.ndarray) -> nm.Node:
    """Mean of the marginal-style loss over the conditional queries."""
    terms = [goal_loss_marginal(tape, d, target_idx, gt_offsets, mask)
             for d in dists]
    if len(terms) == 1:
        return terms[0]
    return nm.scale(tape, functools.reduce(lambda a, b: nm.add(tape, a, b), terms),
                    1.0 / len(terms))


def goal_interactive_loss(tape: nm.Tape, pairs: goals.GoalPairSet,
                          k_joint: int) -> nm.Node:
    """Mean binary cross entropy of the joint scores against a one-hot at
    the target joint mode."""
    onehot = np.zeros(pairs.n_pairs)
    onehot[k_joint - 1] = 1.0
    return nm.scale(tape, nm.sum_all(tape, nm.bce_terms(tape, pairs.scores, onehot)),
                    1.0 / pairs.n_pairs)


def trajectory_loss(tape: nm.Tape, ro: rollout.RolloutResult,
                    gt_a: np.ndarray, gt_b: np.ndarray, k_joint: int,
                    n_modes: int, mask_nonbest: bool = False) -> nm.Node:
    """Squared-error trajectory loss over all joint modes, normalized by
    1/(2 * n_modes * T). Only the target mode is regressed toward ground
    truth; the others go to zero (literal form) or are dropped entirely
    (mask_nonbest)."""
    horizon = len(ro.steps_a)
    norm = 1.0 / (2.0 * n_modes * horizon)
    traj_a = nm.concat(tape, ro.steps_a, axis=0)
    traj_b = nm.concat(tape, ro.steps_b, axis=0)
    if ro.n_modes == 1:
        # one rollout shared by every mode (teacher forcing)
        se = nm.add(tape,
                    nm.sum_all(tape, nm.squared_error(tape, traj_a, tape.const(gt_a))),
                    nm.sum_all(tape, nm.squared_error(tape, traj_b, tape.const(gt_b))))
        if mask_nonbest or n_modes == 1:
            return nm.scale(tape, se, norm)
        zero = nm.add(tape, nm.sum_all(tape, nm.mul(tape, traj_a, traj_a)),
                      nm.sum_all(tape, nm.mul(tape, traj_b, traj_b)))
        return nm.scale(tape, nm.add(tape, se, nm.scale(tape, zero, n_modes - 1.0)),
                        norm)
    if ro.n_modes != n_modes:
        raise nm.ContractError(f"rollout has {ro.n_modes} modes, loss expects "
                               f"{n_modes}")
    # rows are step-major blocks of modes: row t*M + m
    sel = np.zeros((horizon * n_modes, 1))
    sel[np.arange(horizon) * n_modes + (k_joint - 1)] = 1.0
    tgt_a = np.repeat(gt_a, n_modes, axis=0) * sel
    tgt_b = np.repeat(gt_b, n_modes, axis=0) * sel
    se_a = nm.squared_error(tape, traj_a, tape.const(tgt_a))
    se_b = nm.squared_error(tape, traj_b, tape.const(tgt_b))
    if mask_nonbest:
        se_a, se_b = nm.cmul(tape, se_a, sel), nm.cmul(tape, se_b, sel)
    return nm.scale(tape, nm.add(tape, nm.sum_all(tape, se_a),
                                 nm.sum_all(tape, se_b)), norm)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    losses: dict
    targets: GoalTargets
    pairs: goals.GoalPairSet
    top_a: np.ndarray

    @property
    def total(self) -> float:
        return float(sum(l.data for l in self.losses.values()))

    @property
    def joint_argmax(self) -> int:
        return int(self.pairs.scores.data.argmax()) + 1


def _encode_all(tape, cfg, prep):
    s = prep.scenario
    enc_a = encoder.encode_agent_frame(tape, cfg, s, "A", prep.goals_a)
    enc_b = encoder.encode_agent_frame(tape, cfg, s, "B", prep.goals_b)
    u_a, u_b = rollout.encode_histories(tape, cfg, s)
    return enc_a, enc_b, u_a, u_b


def _conditional_grid(tape, cfg, prep, enc_b, dist_a):
    """Conditional distributions of B under A's predicted top goals, plus
    the selected indices; queries are A's candidate points in B's frame.
    Offsets for the grid are regressed separately where needed."""
    s = prep.scenario
    top_a, _ = goals.select_top_goals(dist_a.probs.data, dist_a.mask, cfg.top_k)
    queries = scene.to_agent_frame(prep.goals_a.world[top_a], s.ref_pose("B"))
    conds = goals.predict_goals(tape, cfg, "B", enc_b, prep.goals_b.positions,
                                queries, want_offsets=False)
    return top_a, queries, conds


def training_forward(tape: nm.Tape, cfg, prep: Preprocessed) -> ForwardResult:
    s = prep.scenario
    enc_a, enc_b, u_a, u_b = _encode_all(tape, cfg, prep)

    dist_a = goals.predict_goals(tape, cfg, "A", enc_a, prep.goals_a.positions)[0]
    query_tf = scene.to_agent_frame(s.gt_endpoint("A"), s.ref_pose("B"))
    dist_b_tf = goals.predict_goals(tape, cfg, "B", enc_b,
                                    prep.goals_b.positions, query_tf[None, :])[0]

    top_a, _, conds = _conditional_grid(tape, cfg, prep, enc_b, dist_a)
    pairs = goals.joint_distribution(tape, cfg, dist_a, conds, top_a)
    targets = build_goal_targets(prep, pairs, cfg.top_k)

    ro = rollout.rollout_joint(tape, cfg, s, enc_a.s_x, enc_b.s_x, u_a, u_b,
                               None, None, "teacher_forced")
    losses = {
        "goal_a": goal_loss_marginal(tape, dist_a, targets.k_a,
                                     prep.goals_a.offsets_gt, enc_a.goal_mask),
        "goal_b": goal_loss_conditional(tape, [dist_b_tf], targets.k_b,
                                        prep.goals_b.offsets_gt, enc_b.goal_mask),
        "joint": goal_interactive_loss(tape, pairs, targets.k_joint),
        "traj": trajectory_loss(tape, ro, prep.gt_fut_a, prep.gt_fut_b,
                                targets.k_joint, cfg.top_k ** 2,
                                cfg.traj_loss_mask_nonbest),
    }
    return ForwardResult(losses=losses, targets=targets, pairs=pairs, top_a=top_a)


def inference_forward(cfg, store, prep: Preprocessed):
    """Free-running prediction: predicted top goals of A condition B, all
    goal pairs roll out with refined goal anchors and self-fed states.
    Returns (scores, trajectories in world frame, pairs, targets)."""
    tape = nm.Tape(store)
    s = prep.scenario
    enc_a, enc_b, u_a, u_b = _encode_all(tape, cfg, prep)
    dist_a = goals.predict_goals(tape, cfg, "A", enc_a, prep.goals_a.positions)[0]
    top_a, queries, conds = _conditional_grid(tape, cfg, prep, enc_b, dist_a)
    pairs = goals.joint_distribution(tape, cfg, dist_a, conds, top_a)
    pairs.goal_a = (prep.goals_a.positions[pairs.q_index]
                    + dist_a.offsets.data[pairs.q_index])
    off_b = goals.goal_offsets_for(tape, cfg, "B", enc_b,
                                   prep.goals_b.positions, pairs.k_index,
                                   np.repeat(queries, cfg.top_k, axis=0))
    pairs.goal_b = prep.goals_b.positions[pairs.k_index] + off_b.data
    ro = rollout.rollout_joint(tape, cfg, s, enc_a.s_x, enc_b.s_x, u_a, u_b,
                               pairs.goal_a, pairs.goal_b, "free_running")
    traj_a = scene.to_world_frame(ro.trajectories("A"), s.ref_pose("A"))
    traj_b = scene.to_world_frame(ro.trajectories("B"), s.ref_pose("B"))
    return pairs.scores.data.copy(), traj_a, traj_b, pairs, \
        build_goal_targets(prep, pairs, cfg.top_k)


def predict_record(cfg, store, scenario: scene.Scenario, keep: int) -> dict:
    """Submission-format record with `keep` modes, suppression-filtered and
    score-ordered."""
    prep = preprocess(cfg, scenario)
    scores, traj_a, traj_b, pairs, _ = inference_forward(cfg, store, prep)
    kept = goals.nms_filter(scores, pairs.goal_a, pairs.goal_b,
                            min(keep, len(scores)), cfg.nms_radius)
    return {
        "scenario_id": scenario.scenario_id,
        "modes": [{
            "score": float(scores[i]),
            "traj_A": [[float(x), float(y)] for x, y in traj_a[i]],
            "traj_B": [[float(x), float(y)] for x, y in traj_b[i]],
        } for i in kept],
    }


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    lr: float
    losses: dict
    grad_norms: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.losses.values()))

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.lr!r},{self.losses['goal_a']!r},"
                f"{self.losses['goal_b']!r},{self.losses['joint']!r},"
                f"{self.losses['traj']!r},{self.total!r}")


CSV_HEADER = "epoch,lr,loss_goal_a,loss_goal_b,loss_joint,loss_traj,total"


def train_epoch(preps: list, store: nm.ParameterStore, cfg,
                tcfg: TrainConfig, epoch: int) -> EpochReport:
    """One pass over the data with the staged per-batch updates."""
    rng = np.random.default_rng([tcfg.seed, epoch])
    order = rng.permutation(len(preps))
    lr = tcfg.lr * tcfg.decay_factor ** (epoch // tcfg.decay_every)
    sums = {k: 0.0 for k in LOSS_KEYS}
    norms = {k: 0.0 for k in LOSS_KEYS}
    n_batches = 0
    for start in range(0, len(order), tcfg.batch_size):
        batch = order[start: start + tcfg.batch_size]
        accums = {k: {} for k in LOSS_KEYS}
        for i in batch:
            tape = nm.Tape(store)
            fwd = training_forward(tape, cfg, preps[i])
            for key, loss in fwd.losses.items():
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite {key} loss in batch "
                        f"{[preps[j].scenario.scenario_id for j in batch]}")
                sums[key] += value
                tape.backward(loss, accum=accums[key])
        for key, groups in STAGES:
            names = model.group_names(store, *groups)
            store.zero_grads()
            for name, grad in accums[key].items():
                store.entries[name].grad[...] = grad / len(batch)
            norms[key] += store.grad_norm(names)
            nm.adam_update(store, lr, tcfg.betas, tcfg.eps, names=names)
            store.zero_grads()
        n_batches += 1
    n = len(preps)
    return EpochReport(epoch=epoch, lr=lr,
                       losses={k: sums[k] / n for k in LOSS_KEYS},
                       grad_norms={k: norms[k] / max(n_batches, 1)
                                   for k in LOSS_KEYS})


def train(scenarios: list, cfg, tcfg: TrainConfig, store=None,
          start_epoch: int = 0, log_fh=None, progress=None):
    """Full training run; returns (store, reports). Appends one CSV row per
    epoch to log_fh when given."""
    if store is None:
        store = model.init_parameters(cfg, seed=tcfg.seed)
    preps = [preprocess(cfg, s) for s in scenarios]
    reports = []
    for epoch in range(start_epoch, tcfg.epochs):
        report = train_epoch(preps, store, cfg, tcfg, epoch)
        reports.append(report)
        if log_fh is not None:
            log_fh.write(report.csv_row() + "\n")
            log_fh.flush()
        if progress is not None:
            progress(report)
    return store, reports


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, store: nm.ParameterStore, cfg, tcfg: TrainConfig,
                    epoch: int) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": cfg.to_dict(),
            "train": asdict(tcfg), "seed": store.seed,
            "step_count": store.step_count, "epoch": epoch}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, e in store.entries.items():
        arrays[f"value/{name}"] = e.value
        arrays[f"m/{name}"] = e.m
        arrays[f"v/{name}"] = e.v
        arrays[f"steps/{name}"] = np.asarray(e.steps, dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns (store, cfg, tcfg, epoch); raises ConfigError on any shape or
    schema mismatch."""
    from .model import ModelConfig, init_parameters
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise nm.ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = ModelConfig.from_dict(meta["config"])
        tcfg = TrainConfig(**{k: tuple(v) if k == "betas" else v
                              for k, v in meta["train"].items()})
        store = init_parameters(cfg, seed=meta["seed"])
        store.step_count = int(meta["step_count"])
        for name in store.names():
            key = f"value/{name}"
            if key not in data:
                raise nm.ConfigError(f"checkpoint missing parameter {name!r}")
            if data[key].shape != store.value(name).shape:
                raise nm.ConfigError(
                    f"checkpoint shape mismatch for {name!r}: "
                    f"{data[key].shape} vs {store.value(name).shape}")
            e = store.entries[name]
            e.value[...] = data[key]
            e.m[...] = data[f"m/{name}"]
            e.v[...] = data[f"v/{name}"]
            e.steps = int(data[f"steps/{name}"])
    return store, cfg, tcfg, int(meta["epoch"])
