"""Goal interactive prediction: per-candidate scores and offset regression
for each agent (marginal, or conditioned on the partner's queried goal), the
joint score grid over selected goal pairs, and endpoint non-maximum
suppression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm


def _head_in_dim(cfg) -> int:
    # goal feature, candidate position, query point, query-presence flag
    return cfg.goal_feature_dim + 2 + 2 + 1


def init_params(store: nm.ParameterStore, cfg) -> None:
    for role in ("A", "B"):
        nm.mlp3_params(store, f"goal.{role}.seg", _head_in_dim(cfg),
                       cfg.head_hidden, 1)
        nm.mlp3_params(store, f"goal.{role}.reg", _head_in_dim(cfg),
                       cfg.head_hidden, 2)


@dataclass
class GoalDistribution:
    probs: nm.Node               # (K,) simplex over unmasked candidates
    offsets: nm.Node             # (K, 2) meters, zero where masked
    query: np.ndarray | None     # conditioning point in this agent's frame
    mask: np.ndarray


def _head_columns(cfg, positions, qs, flag):
    k = len(positions)
    cols = np.zeros((len(qs) * k, 5))
    cols[:, 0:2] = np.tile(positions * cfg.pos_scale, (len(qs), 1))
    cols[:, 2:4] = np.repeat(np.asarray(qs) * cfg.pos_scale, k, axis=0)
    cols[:, 4] = flag
    return cols


def predict_goals(tape: nm.Tape, cfg, role: str, encoding,
                  positions: np.ndarray, queries: np.ndarray | None = None,
                  want_offsets: bool = True) -> list[GoalDistribution]:
    """Score (and optionally offset-regress) every candidate, once per query;
    marginal mode when queries is None. Queries must already be in this
    agent's frame; all query blocks share one batched head pass."""
    k = len(positions)
    mask = encoding.goal_mask
    if queries is None:
        qs, flag = np.zeros((1, 2)), 0.0
    else:
        qs, flag = np.asarray(queries, dtype=np.float64).reshape(-1, 2), 1.0
    n_q = len(qs)

    feats = encoding.goal_features
    if n_q > 1:
        feats = nm.gather_rows(tape, feats, np.tile(np.arange(k), n_q))
    inputs = nm.concat(tape, [feats, tape.const(_head_columns(cfg, positions, qs, flag))],
                       axis=1)
    logits = nm.reshape(tape, nm.mlp3(tape, inputs, f"goal.{role}.seg"), (n_q, k))
    probs = nm.softmax(tape, logits, mask=mask)
    offsets = None
    if want_offsets:
        offsets = nm.cmul(tape, nm.mlp3(tape, inputs, f"goal.{role}.reg"),
                          np.tile(mask, n_q)[:, None].astype(float))

    out = []
    for i in range(n_q):
        out.append(GoalDistribution(
            probs=nm.reshape(tape, nm.narrow(tape, probs, 0, i, 1), (k,)),
            offsets=None if offsets is None else nm.narrow(tape, offsets, 0, i * k, k),
            query=None if queries is None else qs[i],
            mask=mask))
    return out


def goal_offsets_for(tape: nm.Tape, cfg, role: str, encoding,
                     positions: np.ndarray, cand_idx: np.ndarray,
                     queries_per_row: np.ndarray | None) -> nm.Node:
    """Offset regression restricted to chosen candidate rows (one optional
    query point per row, already in this agent's frame)."""
    cand_idx = np.asarray(cand_idx, dtype=np.int64)
    n = len(cand_idx)
    cols = np.zeros((n, 5))
    cols[:, 0:2] = positions[cand_idx] * cfg.pos_scale
    if queries_per_row is not None:
        cols[:, 2:4] = np.asarray(queries_per_row) * cfg.pos_scale
        cols[:, 4] = 1.0
    feats = nm.gather_rows(tape, encoding.goal_features, cand_idx)
    inputs = nm.concat(tape, [feats, tape.const(cols)], axis=1)
    out = nm.mlp3(tape, inputs, f"goal.{role}.reg")
    return nm.cmul(tape, out, encoding.goal_mask[cand_idx, None].astype(float))


def select_top_goals(probs: np.ndarray, mask: np.ndarray, top_k: int):
    """Indices of the top_k highest-probability unmasked candidates, ties to
    the lower index. Fewer unmasked than top_k pads with -1 and mask."""
    cand = np.flatnonzero(mask)
    order = cand[np.argsort(-probs[cand], kind="stable")]
    idx = order[:top_k]
    valid = np.ones(len(idx), dtype=bool)
    if len(idx) < top_k:
        pad = top_k - len(idx)
        idx = np.concatenate([idx, np.full(pad, -1, dtype=np.int64)])
        valid = np.concatenate([valid, np.zeros(pad, dtype=bool)])
    return idx.astype(np.int64), valid


@dataclass
class GoalPairSet:
    """All (query, reaction) goal pairs of one scenario. kappa is the 1-based
    pair index top_k*(q-1)+k over the selected grids; refined endpoints are
    filled on demand (inference)."""
    scores: nm.Node              # (top_k**2,)
    q_index: np.ndarray          # (top_k**2,) candidate index of agent A
    k_index: np.ndarray          # (top_k**2,) candidate index of agent B
    top_k: int
    goal_a: np.ndarray | None = None   # (top_k**2, 2) refined, A's frame
    goal_b: np.ndarray | None = None   # (top_k**2, 2) refined, B's frame

    @property
    def n_pairs(self) -> int:
        return self.top_k ** 2

    def kappa(self, q_pos: int, k_pos: int) -> int:
        return self.top_k * q_pos + k_pos + 1


def joint_distribution(tape: nm.Tape, cfg, marginal: GoalDistribution,
                       conditionals: list[GoalDistribution],
                       top_a: np.ndarray) -> GoalPairSet:
    """Joint score of pair (q, k) is the product of A's marginal probability
    and B's conditional probability under query q; per query, B contributes
    its conditional top-k candidates."""
    kk = cfg.top_k
    p_a_top = nm.gather_rows(tape, marginal.probs, top_a)
    p_b_parts = []
    q_idx = np.repeat(top_a, kk)
    k_idx = np.zeros(kk * kk, dtype=np.int64)
    for j, cond in enumerate(conditionals):
        top_b, _ = select_top_goals(cond.probs.data, cond.mask, kk)
        k_idx[j * kk: (j + 1) * kk] = top_b
        p_b_parts.append(nm.gather_rows(tape, cond.probs, top_b))
    p_b = nm.concat(tape, p_b_parts, axis=0)
    p_a_rep = nm.gather_rows(tape, p_a_top, np.repeat(np.arange(kk), kk))
    scores = nm.mul(tape, p_a_rep, p_b)
    return GoalPairSet(scores=scores, q_index=q_idx, k_index=k_idx, top_k=kk)


def nms_filter(scores: np.ndarray, ends_a: np.ndarray, ends_b: np.ndarray,
               keep: int, radius: float) -> np.ndarray:
    """Greedy suppression by joint score: a pair is dropped when both of its
    endpoints fall within radius of an already-kept pair's endpoints.
    Suppressed pairs backfill by score if fewer than `keep` survive; the
    result is score-ordered (ties to the lower pair index)."""
    n = len(scores)
    order = np.lexsort((np.arange(n), -scores))
    kept, suppressed = [], []
    for i in order:
        close = any(np.linalg.norm(ends_a[i] - ends_a[j]) <= radius
                    and np.linalg.norm(ends_b[i] - ends_b[j]) <= radius
                    for j in kept)
        (suppressed if close else kept).append(i)
        if len(kept) == keep:
            break
    for i in suppressed + [i for i in order if i not in kept and i not in suppressed]:
        if len(kept) == keep:
            break
        if i not in kept:
            kept.append(i)
    kept = np.asarray(kept[:keep], dtype=np.int64)
    return kept[np.lexsort((kept, -scores[kept]))]
