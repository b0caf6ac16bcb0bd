import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepmovesort.association import (
    GATED, AssociationWeights, DTIoUParams, appearance_cost, atcm_cost, dtiou_cost, dtiou_cost_matrix,
    dtiou_threshold, fuse, hpc_cost, solve, update_track_embedding,
)
from deepmovesort.geometry import BoundingBox, iou_matrix

from oracles import brute_force_assignment
from strategies import boxes


# ---------------------------------------------------------------- DT-IoU

@pytest.mark.parametrize("t,expected", [(0, 0.5), (1, 0.3), (10, 0.25)])
def test_dtiou_threshold_values(t, expected):
    assert abs(dtiou_threshold(t, 0.5, 0.25, 0.2) - expected) < 1e-9


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 1), st.floats(0, 1), st.floats(0, 2))
def test_dtiou_threshold_monotone(t1, t2, a, b, decay):
    upper, lower = max(a, b), min(a, b)
    lo, hi = sorted((t1, t2))
    assert dtiou_threshold(hi, upper, lower, decay) <= dtiou_threshold(lo, upper, lower, decay)
    assert dtiou_threshold(hi, upper, lower, decay) >= lower


def test_dtiou_cost_gating_and_fusion():
    p = DTIoUParams(0.5, 0.25, 0.2)
    a = BoundingBox(0, 0, 10, 10, 0.9)
    b = BoundingBox(0, 0, 10, 12.5, 0.8)     # IoU 0.8
    assert dtiou_cost(a, b, 0, p) == pytest.approx(0.2)
    assert dtiou_cost(a, b, 0, p, fuse=True) == pytest.approx(0.36)
    assert dtiou_cost(a, BoundingBox(0, 0, 10, 12.5, 0.5), 0, p, fuse=True) == GATED
    c = BoundingBox(6, 0, 10, 10)             # IoU 0.25
    assert dtiou_cost(a, c, 0, p) == GATED
    assert dtiou_cost(a, c, 10, p) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        DTIoUParams(0.2, 0.5, 0.1)


def test_dtiou_expansion_helps_disjoint_boxes():
    a, b = BoundingBox(0, 0, 10, 10), BoundingBox(11, 0, 10, 10)
    assert dtiou_cost(a, b, 0, DTIoUParams.fixed(0.1)) == GATED
    assert dtiou_cost(a, b, 0, DTIoUParams.fixed(0.1, e_rate=0.5)) < 1.0


@given(st.lists(boxes(), min_size=1, max_size=5), st.lists(boxes(), min_size=1, max_size=5),
       st.floats(0, 1), st.floats(0, 0.5), st.booleans())
def test_dtiou_matrix_matches_scalar(ps, ds, upper, e_rate, fused):
    p = DTIoUParams(upper, upper / 2, 0.1, e_rate)
    t = np.arange(len(ps), dtype=float)
    mat = dtiou_cost_matrix(np.array([b.tlwh() for b in ps]), np.array([b.tlwh() for b in ds]),
                            np.array([b.confidence for b in ds]), t, p, fused)
    for i, a in enumerate(ps):
        for j, b in enumerate(ds):
            ref = dtiou_cost(a, b, t[i], p, fused)
            if ref == GATED:
                assert mat[i, j] == GATED or abs(1 - mat[i, j] - dtiou_threshold(t[i], p.upper, p.lower, p.decay)) < 1e-9
            else:
                assert mat[i, j] == pytest.approx(ref, abs=1e-9) or mat[i, j] == GATED


@given(st.lists(boxes(), min_size=1, max_size=5), st.lists(boxes(), min_size=1, max_size=5), st.floats(0.05, 0.9))
def test_constant_threshold_is_plain_iou_gating(ps, ds, thr):
    pt, dt = np.array([b.tlwh() for b in ps]), np.array([b.tlwh() for b in ds])
    dtiou = dtiou_cost_matrix(pt, dt, np.ones(len(ds)), np.arange(len(ps)) * 3.0, DTIoUParams.fixed(thr))
    ious = iou_matrix(pt, dt)
    plain = np.where(ious < thr, GATED, 1.0 - ious)
    assert solve(dtiou).matches == solve(plain).matches


# ---------------------------------------------------------------- HPC / ATCM / appearance

def test_hpc_examples():
    a = BoundingBox(0.1, 0.55, 0.1, 0.25)
    b = BoundingBox(0.1, 0.595, 0.1, 0.225)
    assert hpc_cost(a, a, 1, 1) == 0
    assert abs(hpc_cost(a, b, 1, 1) - 0.045) < 1e-9
    assert hpc_cost(a, b, 1, 0) == pytest.approx(0.025)


def test_atcm_examples():
    assert atcm_cost(0.7, 0.7) == 0
    assert atcm_cost(0.9, 0.6) == pytest.approx(0.3)
    assert atcm_cost(1.3, 1.0) == 0.0
    assert atcm_cost(1.3, 0.7) == pytest.approx(0.3)


def test_appearance_examples():
    e = np.array([1.0, 0.0])
    assert appearance_cost(e, e) == 0
    assert appearance_cost(e, np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert appearance_cost(e, -e) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        appearance_cost(e, np.zeros(2))
    with pytest.raises(ValueError):
        appearance_cost(e, np.array([2.0, 0.0]))


def test_ema_examples():
    cur, new = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    np.testing.assert_array_equal(update_track_embedding(cur, new, 1.0), cur)
    np.testing.assert_allclose(update_track_embedding(cur, new, 0.0), new)
    np.testing.assert_allclose(update_track_embedding(cur, new, 0.5), [0.7071067811865476] * 2)
    np.testing.assert_array_equal(update_track_embedding(None, new), new)
    np.testing.assert_array_equal(update_track_embedding(cur, -cur, 0.5), cur)
    with pytest.raises(ValueError):
        update_track_embedding(cur, new, 1.5)


unit = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


@given(unit, unit, st.floats(0, 1))
def test_ema_stays_unit_norm(cur, new, alpha):
    assert abs(np.linalg.norm(update_track_embedding(cur, new, alpha)) - 1.0) < 1e-6


# ---------------------------------------------------------------- fusion

def test_fuse_worked_example():
    w = AssociationWeights(dtiou=1.0, hpc=2.0, atcm=1.5, appearance=2.0)
    costs = {k: np.array([[v]]) for k, v in (("dtiou", 0.4), ("hpc", 0.045), ("atcm", 0.3), ("appearance", 0.2))}
    assert abs(fuse(costs, w)[0, 0] - 1.34) < 1e-9


def test_fuse_single_method_and_zero_weights(rng):
    c = rng.uniform(0, 1, (3, 4))
    c[0, 1] = GATED
    np.testing.assert_array_equal(fuse({"dtiou": c}, AssociationWeights()), c)
    other = {"dtiou": c, "hpc": rng.uniform(0, 1, (3, 4)), "atcm": rng.uniform(0, 1, (3, 4))}
    np.testing.assert_array_equal(fuse(other, AssociationWeights(hpc=0.0, atcm=0.0)), c)


def test_fuse_gating_dominates_and_missing_embeddings(rng):
    c = rng.uniform(0, 1, (2, 2))
    c[1, 0] = GATED
    app = np.array([[0.5, 0.5], [np.nan, np.nan]])
    out = fuse({"dtiou": c, "appearance": app}, AssociationWeights(appearance=2.0))
    assert out[1, 0] == GATED
    assert out[1, 1] == pytest.approx(c[1, 1])
    assert out[0, 0] == pytest.approx(c[0, 0] + 1.0)
    with pytest.raises(ValueError):
        fuse({"dtiou": c, "hpc": np.zeros((3, 2))}, AssociationWeights())
    with pytest.raises(ValueError):
        AssociationWeights(dtiou=0.0)


@given(st.integers(1, 5), st.integers(1, 5), st.floats(0.01, 100), st.integers(0, 10 ** 6))
def test_weight_scaling_keeps_matching(n, m, k, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0, 1, (n, m))
    d[rng.random((n, m)) < 0.3] = GATED
    costs = {"dtiou": d, "hpc": rng.uniform(0, 1, (n, m)), "atcm": rng.uniform(0, 1, (n, m))}
    w = AssociationWeights(1.0, 0.5, 1.0, 1.0, 0.7, 0.0)
    assert solve(fuse(costs, w)).matches == solve(fuse(costs, w.scaled(k))).matches


# ---------------------------------------------------------------- solver

def test_solve_examples():
    a = solve(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert a.matches == [(0, 0), (1, 1)] and a.total_cost(np.array([[1.0, 2.0], [2.0, 1.0]])) == 2
    g = solve(np.array([[GATED, GATED], [GATED, 0.1]]))
    assert g.matches == [(1, 1)] and g.unmatched_tracks == [0] and g.unmatched_detections == [0]
    e = solve(np.zeros((0, 3)))
    assert e.matches == [] and e.unmatched_detections == [0, 1, 2]
    assert solve(np.full((2, 2), GATED)).matches == []
    with pytest.raises(ValueError):
        solve(np.array([[np.nan]]))


def test_solve_never_picks_gated_cell():
    c = np.array([[0.0, GATED], [0.0, GATED]])
    a = solve(c)
    assert len(a.matches) == 1 and all(not math.isinf(c[i, j]) for i, j in a.matches)


@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 10 ** 6), st.floats(0, 0.5))
def test_solver_matches_brute_force(n, m, seed, p_gate):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, (n, m))
    c[rng.random((n, m)) < p_gate] = GATED
    a = solve(c)
    count, cost = brute_force_assignment(c)
    assert len(a.matches) == count
    assert a.total_cost(c) == cost


def test_solver_is_deterministic(rng):
    c = np.round(rng.uniform(0, 1, (6, 6)), 1)
    assert all(solve(c).matches == solve(c).matches for _ in range(5))
