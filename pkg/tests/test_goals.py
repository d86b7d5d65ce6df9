import types

import numpy as np
import pytest

from cgtp import goals, numerics as nm


def fake_encoding(tape, k, feat_dim=6, mask=None, seed=0):
    rng = np.random.default_rng(seed)
    mask = np.ones(k, dtype=bool) if mask is None else mask
    feats = rng.normal(size=(k, feat_dim))
    feats[~mask] = 0.0
    return types.SimpleNamespace(goal_features=tape.const(feats), goal_mask=mask)


def head_cfg(k_feat=6, top_k=2):
    return types.SimpleNamespace(goal_feature_dim=k_feat, head_hidden=8,
                                 top_k=top_k, pos_scale=0.1)


def make_store(cfg):
    store = nm.ParameterStore(seed=0)
    goals.init_params(store, cfg)
    return store


def zero_head(store, name):
    for pname in store.names():
        if pname.startswith(name):
            store.entries[pname].value[...] = 0.0


# ---------------------------------------------------------------------------
# scores and offsets
# ---------------------------------------------------------------------------

def test_equal_logits_give_uniform():
    cfg = head_cfg()
    store = make_store(cfg)
    zero_head(store, "goal.A.seg")
    tape = nm.Tape(store)
    enc = fake_encoding(tape, 8)
    dist = goals.predict_goals(tape, cfg, "A", enc, np.zeros((8, 2)))[0]
    assert np.allclose(dist.probs.data, 1.0 / 8, atol=1e-12)


def test_single_unmasked_candidate_gets_probability_one():
    cfg = head_cfg()
    store = make_store(cfg)
    mask = np.zeros(5, dtype=bool)
    mask[3] = True
    tape = nm.Tape(store)
    enc = fake_encoding(tape, 5, mask=mask)
    dist = goals.predict_goals(tape, cfg, "A", enc, np.zeros((5, 2)))[0]
    assert dist.probs.data[3] == 1.0
    assert np.array_equal(np.delete(dist.probs.data, 3), np.zeros(4))


def test_distribution_sums_to_one_and_nonnegative():
    cfg = head_cfg()
    store = make_store(cfg)
    rng = np.random.default_rng(1)
    for trial in range(20):
        k = int(rng.integers(3, 30))
        mask = rng.random(k) < 0.8
        if not mask.any():
            mask[0] = True
        tape = nm.Tape(store)
        enc = fake_encoding(tape, k, mask=mask, seed=trial)
        dist = goals.predict_goals(tape, cfg, "A", enc,
                                   rng.normal(size=(k, 2)))[0]
        assert abs(dist.probs.data.sum() - 1.0) < 1e-6
        assert np.all(dist.probs.data >= 0)
        assert np.array_equal(dist.probs.data[~mask], np.zeros((~mask).sum()))


def test_zero_offset_head_gives_zero_offsets():
    cfg = head_cfg()
    store = make_store(cfg)
    zero_head(store, "goal.B.reg")
    tape = nm.Tape(store)
    enc = fake_encoding(tape, 7)
    dist = goals.predict_goals(tape, cfg, "B", enc, np.zeros((7, 2)),
                               queries=np.array([[1.0, 2.0]]))[0]
    assert dist.offsets.data.shape == (7, 2)
    assert np.array_equal(dist.offsets.data, np.zeros((7, 2)))


def test_marginal_and_conditional_share_weights_but_differ_by_flag():
    cfg = head_cfg()
    store = make_store(cfg)
    tape = nm.Tape(store)
    enc = fake_encoding(tape, 6)
    marg = goals.predict_goals(tape, cfg, "B", enc, np.zeros((6, 2)))[0]
    cond = goals.predict_goals(tape, cfg, "B", enc, np.zeros((6, 2)),
                               queries=np.zeros((1, 2)))[0]
    # same inputs except the presence flag -> generally different scores
    assert not np.allclose(marg.probs.data, cond.probs.data)


def test_goal_offsets_for_selected_rows_match_full_pass():
    cfg = head_cfg()
    store = make_store(cfg)
    tape = nm.Tape(store)
    enc = fake_encoding(tape, 9)
    positions = np.random.default_rng(3).normal(size=(9, 2))
    q = np.array([[0.5, -1.0]])
    full = goals.predict_goals(tape, cfg, "B", enc, positions, queries=q)[0]
    idx = np.array([1, 4, 7])
    sel = goals.goal_offsets_for(tape, cfg, "B", enc, positions, idx,
                                 np.repeat(q, 3, axis=0))
    assert np.allclose(sel.data, full.offsets.data[idx], atol=1e-12)


# ---------------------------------------------------------------------------
# top-k selection
# ---------------------------------------------------------------------------

def test_select_top_goals_hand_case():
    probs = np.array([0.1, 0.5, 0.4])
    idx, valid = goals.select_top_goals(probs, np.ones(3, bool), 2)
    assert idx.tolist() == [1, 2] and valid.all()


def test_select_top_goals_tie_takes_lower_index():
    probs = np.array([0.25, 0.25, 0.25, 0.25])
    idx, _ = goals.select_top_goals(probs, np.ones(4, bool), 2)
    assert idx.tolist() == [0, 1]


def test_select_top_goals_all():
    probs = np.array([0.2, 0.3, 0.5])
    idx, _ = goals.select_top_goals(probs, np.ones(3, bool), 3)
    assert sorted(idx.tolist()) == [0, 1, 2]


def test_select_top_goals_pads_when_short():
    probs = np.array([0.6, 0.4, 0.0])
    mask = np.array([True, False, False])
    idx, valid = goals.select_top_goals(probs, mask, 2)
    assert idx.tolist() == [0, -1]
    assert valid.tolist() == [True, False]


# ---------------------------------------------------------------------------
# joint distribution
# ---------------------------------------------------------------------------

def const_dist(tape, probs, mask=None):
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.ones(len(probs), bool) if mask is None else mask
    return goals.GoalDistribution(probs=tape.const(probs), offsets=None,
                                  query=None, mask=mask)


def test_joint_product_of_simplexes():
    cfg = head_cfg(top_k=2)
    tape = nm.Tape()
    marg = const_dist(tape, [0.6, 0.4])
    conds = [const_dist(tape, [0.5, 0.5]), const_dist(tape, [0.5, 0.5])]
    pairs = goals.joint_distribution(tape, cfg, marg, conds,
                                     np.array([0, 1]))
    assert np.allclose(sorted(pairs.scores.data), [0.2, 0.2, 0.3, 0.3])
    assert abs(pairs.scores.data.sum() - 1.0) < 1e-12


def test_joint_one_hot_marginal_concentrates_block():
    cfg = head_cfg(top_k=2)
    tape = nm.Tape()
    marg = const_dist(tape, [1.0, 0.0])
    conds = [const_dist(tape, [0.7, 0.3]), const_dist(tape, [0.2, 0.8])]
    pairs = goals.joint_distribution(tape, cfg, marg, conds, np.array([0, 1]))
    assert pairs.scores.data[:2].sum() == 1.0
    assert pairs.scores.data[2:].sum() == 0.0


def test_joint_matches_elementwise_product_oracle():
    rng = np.random.default_rng(9)
    cfg = head_cfg(top_k=3)
    for _ in range(10):
        k = 7
        tape = nm.Tape()
        pm = rng.dirichlet(np.ones(k))
        marg = const_dist(tape, pm)
        top_a, _ = goals.select_top_goals(pm, np.ones(k, bool), 3)
        conds = [const_dist(tape, rng.dirichlet(np.ones(k))) for _ in range(3)]
        pairs = goals.joint_distribution(tape, cfg, marg, conds, top_a)
        expect = np.empty(9)
        for qi in range(3):
            top_b, _ = goals.select_top_goals(conds[qi].probs.data,
                                              np.ones(k, bool), 3)
            for ki in range(3):
                expect[3 * qi + ki] = pm[top_a[qi]] * conds[qi].probs.data[top_b[ki]]
        assert np.array_equal(pairs.scores.data, expect)


def test_kappa_index_rule_bijection():
    cfg = head_cfg(top_k=5)
    tape = nm.Tape()
    marg = const_dist(tape, np.full(25, 1 / 25))
    conds = [const_dist(tape, np.full(25, 1 / 25)) for _ in range(5)]
    pairs = goals.joint_distribution(tape, cfg, marg, conds, np.arange(5))
    kappas = [pairs.kappa(q, k) for q in range(5) for k in range(5)]
    assert sorted(kappas) == list(range(1, 26))


# ---------------------------------------------------------------------------
# non-maximum suppression
# ---------------------------------------------------------------------------

def test_nms_identical_endpoints_single_survivor_then_backfill():
    scores = np.array([0.5, 0.4, 0.3, 0.2])
    ends = np.zeros((4, 2))
    kept = goals.nms_filter(scores, ends, ends, keep=3, radius=2.0)
    assert kept.tolist() == [0, 1, 2]  # winner plus score-ordered backfill


def test_nms_far_endpoints_keep_top_by_score():
    scores = np.array([0.1, 0.9, 0.5, 0.7])
    ends_a = np.arange(8, dtype=float).reshape(4, 2) * 10
    ends_b = ends_a + 100
    kept = goals.nms_filter(scores, ends_a, ends_b, keep=2, radius=2.0)
    assert kept.tolist() == [1, 3]


def test_nms_near_duplicate_suppressed():
    scores = np.array([0.9, 0.8, 0.7, 0.6])
    ends_a = np.array([[0, 0], [0.5, 0], [10, 0], [20, 0]], dtype=float)
    ends_b = np.array([[0, 0], [0.4, 0], [30, 0], [40, 0]], dtype=float)
    kept = goals.nms_filter(scores, ends_a, ends_b, keep=3, radius=2.0)
    assert kept.tolist() == [0, 2, 3]  # pair 1 duplicates pair 0


def test_nms_one_endpoint_close_is_not_suppression():
    scores = np.array([0.9, 0.8])
    ends_a = np.array([[0, 0], [0.5, 0]], dtype=float)   # close
    ends_b = np.array([[0, 0], [50, 0]], dtype=float)    # far
    kept = goals.nms_filter(scores, ends_a, ends_b, keep=2, radius=2.0)
    assert kept.tolist() == [0, 1]
