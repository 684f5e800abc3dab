from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcx.core import Budget, witness_search
from qcx.expr import ScalarField
from qcx.sets import (
    Ball,
    Box,
    GraphComplement,
    HalfSpace,
    Intersection,
    NormSpec,
    Oracle,
    PlanarFamily,
    PuncturedAxis,
    ReinhardtLog,
    Union,
    continuity_principle_test,
    dist_directional,
    dist_euclid,
    dist_norm,
    exhaustion_field,
    graph_complement_exhaustion,
    graph_complement_family,
    member,
    neg_log_dist_field,
    set_from_json,
    set_q_convex_check,
    sublevel_compactness,
)

BUDGET = Budget(16, 64, 128)
SQ = Box([[0, 1], [0, 1]])


def _primitives():
    return [
        (Ball([0.0, 0.0], 1.0), [[-1, 1], [-1, 1]]),
        (SQ, [[0, 1], [0, 1]]),
        (HalfSpace([1.0, -0.5], 0.2), [[-1, 1], [-1, 1]]),
        (Ball([0.5, -0.5, 0.0], 1.5), [[-1, 2], [-2, 1], [-1.5, 1.5]]),
    ]


# -- membership ----------------------------------------------------------------------


def test_membership_examples():
    assert member(SQ, [0.5, 0.5])
    assert not member(GraphComplement(["x1"], 1), [1.0, 1.0])
    assert not member(PuncturedAxis([0], 1), [0.0])
    assert member(PuncturedAxis([0], 1), [0.1])


def test_boolean_combinations():
    a, b = Ball([0, 0], 1.0), Ball([1, 0], 1.0)
    assert member(Intersection([a, b]), [0.5, 0.0])
    assert not member(Intersection([a, b]), [-0.5, 0.0])
    assert member(Union([a, b]), [-0.5, 0.0]) and not member(Union([a, b]), [0.5, 2.0])


def test_reinhardt_log_membership():
    s = ReinhardtLog(Box([[-1, 1]]))
    assert member(s, [1.0, 0.0]) and member(s, [0.0, -2.0])
    assert not member(s, [0.0, 0.0]) and not member(s, [3.0, 0.0])


def test_json_round_trip_for_every_variant():
    specs = [
        {"half_space": {"a": [1, 0], "b": 0.5}},
        {"ball": {"center": [0, 0], "radius": 2}},
        {"box": [[0, 1], [0, 1]]},
        {"graph_complement": {"f": ["x1^2"], "n": 1}},
        {"reinhardt_log": {"box": [[-1, 1]]}},
        {"intersection": [{"box": [[0, 1]]}, {"half_space": {"a": [1], "b": 0.5}}]},
        {"union": [{"ball": {"center": [0], "radius": 1}}, {"ball": {"center": [3], "radius": 1}}]},
        {"oracle": {"dim": 2, "expr": "x1^2+x2^2-1", "bbox": [[-1, 1], [-1, 1]]}},
        {"punctured_axis": 1, "dim": 2},
    ]
    rng = np.random.default_rng(0)
    for spec in specs:
        s = set_from_json(spec)
        t = set_from_json(json.loads(json.dumps(s.to_json())))
        X = rng.uniform(-2, 2, (50, s.dim))
        assert np.array_equal(s.member(X), t.member(X)), spec


def test_unknown_variant_is_rejected():
    with pytest.raises(ValueError):
        set_from_json({"torus": {}})


def test_oracle_sets_need_a_bounded_box():
    with pytest.raises(ValueError):
        Oracle(1, "x1", [["-inf", "inf"]])


# -- distances -----------------------------------------------------------------------


def test_euclidean_distance_examples():
    assert dist_euclid(SQ, [0.3, 0.5]) == pytest.approx(0.3)
    assert dist_euclid(Ball([0, 0], 1.0), [0, 0]) == pytest.approx(1.0)
    quadrant = Intersection([HalfSpace([-1, 0], 0), HalfSpace([0, -1], 0)])
    assert dist_euclid(quadrant, [0.2, 0.7]) == pytest.approx(0.2)


def test_distance_of_non_member_is_an_error():
    with pytest.raises(ValueError):
        dist_euclid(SQ, [2.0, 2.0])


def test_directional_distance_examples():
    assert dist_directional(Box([[0, 1]]), [0.3], [1.0]) == pytest.approx(0.3)
    rng = np.random.default_rng(1)
    for _ in range(5):
        v = rng.normal(size=2)
        assert dist_directional(Ball([0, 0], 1.0), [0, 0], v / np.linalg.norm(v)) == pytest.approx(1.0)
    assert dist_directional(PuncturedAxis([0], 2), [0.5, 3.0], [0.0, 1.0]) == math.inf


def test_marching_agrees_with_closed_form_exits():
    s = Intersection([Ball([0, 0], 1.0), HalfSpace([1, 1], 0.5)])
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(-0.5, 0.2, 2)
        if not member(s, x):
            continue
        v = rng.normal(size=2)
        v /= np.linalg.norm(v)
        exact = dist_directional(s, x, v)
        marched = dist_directional(s, x, v, method="march")
        assert marched == pytest.approx(exact, abs=1e-9)


def test_norm_distance_examples():
    assert dist_norm(SQ, [0.3, 0.5]) == pytest.approx(0.3, abs=1e-3)
    assert dist_norm(Ball([0, 0], 1.0), [0, 0]) == pytest.approx(1.0, abs=1e-6)


def test_max_norm_distance_against_dense_direction_oracle():
    # brute force: min over a dense angle grid of R_v(x) * ||v||_inf
    x = np.array([0.3, 0.5])
    th = np.linspace(0, np.pi, 20001)
    V = np.stack([np.cos(th), np.sin(th)], axis=1)
    rv = [dist_directional(SQ, x, v) for v in V]
    oracle = float(np.min(np.array(rv) * np.max(np.abs(V), axis=1)))
    assert dist_norm(SQ, x, NormSpec("max")) == pytest.approx(oracle, rel=1e-3)


@given(st.sampled_from(["euclid", "max", "p", "weighted"]), st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_norm_axioms(kind, seed):
    rng = np.random.default_rng(seed)
    n = 3
    nrm = NormSpec(kind, p=1.5 if kind == "p" else 2.0, weights=rng.uniform(0.1, 3, n) if kind == "weighted" else None)
    a, b = rng.normal(size=(2, n))
    c = float(rng.uniform(-5, 5))
    na, nb, nab = nrm(np.stack([a, b, a + b]))
    assert nab <= na + nb + 1e-12
    assert nrm((c * a)[None, :])[0] == pytest.approx(abs(c) * na, rel=1e-12)


@pytest.mark.parametrize("idx", range(4))
def test_sampled_euclidean_distance_matches_closed_form(idx):
    s, box = _primitives()[idx]
    rng = np.random.default_rng(idx)
    box = np.asarray(box, dtype=float)
    X = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((200, s.dim))
    X = X[s.member(X)][:10]
    for x in X:
        exact = dist_euclid(s, x)
        assert exact <= dist_norm(s, x, directions=4096) <= exact * 1.02 + 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_directional_distance_dominates_euclidean(seed):
    rng = np.random.default_rng(seed)
    s, box = _primitives()[seed % 4]
    box = np.asarray(box, dtype=float)
    x = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(s.dim)
    if not member(s, x):
        return
    v = rng.normal(size=s.dim)
    v /= np.linalg.norm(v)
    assert dist_directional(s, x, v) >= dist_euclid(s, x) - 1e-9


# -- distance fields -------------------------------------------------------------------


def test_neg_log_dist_examples():
    f = neg_log_dist_field(PuncturedAxis([0], 1))
    assert f.raw(np.array([[0.5], [-2.0]])) == pytest.approx([-math.log(0.5), -math.log(2.0)])
    g = neg_log_dist_field(Ball([0, 0], 1.0))
    assert g.raw(np.array([[0.3, 0.4]]))[0] == pytest.approx(-math.log(0.5))
    h = neg_log_dist_field(Box([["-inf", "inf"], ["-inf", "inf"]]))
    assert h.raw(np.array([[0.3, 7.0]]))[0] == -math.inf


def test_exhaustion_examples():
    assert exhaustion_field(Ball([0, 0], 1.0)).raw(np.zeros((1, 2)))[0] == pytest.approx(0.0)
    assert exhaustion_field(SQ).raw(np.array([[0.5, 0.5]]))[0] == pytest.approx(-math.log(0.5) + 0.5)


def test_sublevel_sets_are_relatively_compact():
    rep = sublevel_compactness(SQ, 3.0, [[-0.5, 1.5]] * 2)
    assert rep.relatively_compact and rep.points_in_sublevel > 0


@pytest.mark.parametrize("idx", range(3))
def test_directional_fields_are_n_minus_one_convex(idx):
    s, box = _primitives()[idx]
    rng = np.random.default_rng(10 + idx)
    for _ in range(3):
        v = rng.normal(size=s.dim)
        f = neg_log_dist_field(s, ("directional", v))
        assert witness_search(f, s.dim - 1, box, BUDGET) is None


@pytest.mark.parametrize("spec", [
    {"ball": {"center": [0, 0], "radius": 1}},
    {"box": [[0, 1], [0, 1]]},
    {"intersection": [{"ball": {"center": [0, 0], "radius": 1}}, {"half_space": {"a": [1, 1], "b": 0.5}}]},
])
def test_convex_sets_pass_at_level_zero(spec):
    s = set_from_json(spec)
    assert set_q_convex_check(s, 0, [[-1, 1], [-1, 1]], BUDGET).consistent


def test_punctured_plane_factor_is_zero_convex():
    assert set_q_convex_check(PuncturedAxis([0], 2), 0, [[-1, 1], [-1, 1]], BUDGET).consistent


def test_ball_complement_fails_at_level_zero_and_passes_at_level_one():
    s = Oracle(2, "1-x1^2-x2^2", [[-3, 3], [-3, 3]], dist="norm2(x1,x2)-1")
    box = [[-2.5, 2.5], [-2.5, 2.5]]
    chk = set_q_convex_check(s, 0, box, BUDGET)
    assert not chk.consistent and chk.witness.margin > 0
    assert set_q_convex_check(s, 1, box, BUDGET).consistent


def test_product_exhaustion_keeps_level():
    # max of the exhaustions of the punctured line and of an interval on their product
    v1 = exhaustion_field(PuncturedAxis([0], 1))
    v2 = exhaustion_field(Box([[0, 1]]))

    def func(X):
        X = np.asarray(X, dtype=float)
        return np.maximum(v1.func(X[..., :1]), v2.func(X[..., 1:]))

    def domain(X):
        X = np.asarray(X, dtype=float)
        return (X[..., 0] != 0) & (X[..., 1] > 0) & (X[..., 1] < 1)

    def clearance(X):
        X = np.asarray(X, dtype=float)
        return np.minimum(np.abs(X[..., 0]), np.minimum(X[..., 1], 1 - X[..., 1]))

    f = ScalarField.from_callable(func, 2, smooth="C0", domain=domain, clearance=clearance)
    assert witness_search(f, 0, [[-1, 1], [0, 1]], BUDGET) is None


# -- continuity principle ------------------------------------------------------------------


def _segment_family(y_of_t):
    def psi(t, S):
        return np.stack([S[:, 0], np.full(len(S), y_of_t(t))], axis=1)
    return PlanarFamily(1, 2, psi, np.array([[-0.5, 0.5]]))


def test_full_space_always_holds():
    plane = Box([["-inf", "inf"], ["-inf", "inf"]])
    assert continuity_principle_test(plane, _segment_family(lambda t: 2 - t)).holds


def test_shrinking_chords_in_a_ball_hold():
    assert continuity_principle_test(Ball([0, 0], 1.0), _segment_family(lambda t: 0.5 * (1 - t))).holds


def test_concave_graph_violates_the_principle():
    g = GraphComplement(["-x1^2"], 1)
    fam = graph_complement_family(g, [-1.0], [1.0], 0.0)
    assert fam.info["r0"] == pytest.approx(1.0) and fam.info["y0"] == pytest.approx(-1.0)
    v = continuity_principle_test(g, fam)
    assert v.status == "violated" and v.t_star == 1.0
    p = np.array(v.point)
    assert abs(p[1] - (-p[0] ** 2)) <= 1e-6
    assert not member(g, p)


def test_convex_graph_uses_the_mirrored_family():
    g = GraphComplement(["x1^2"], 1)
    fam = graph_complement_family(g, [-1.0], [1.0], 0.0)
    assert fam.info["sign"] == -1.0
    assert continuity_principle_test(g, fam).status == "violated"


def test_affine_graph_has_no_family():
    with pytest.raises(ValueError):
        graph_complement_family(GraphComplement(["2*x1-x2+1"], 2), [-1.0, 0.0], [1.0, 0.5], 0.0)


def test_vector_valued_graph_family():
    g = GraphComplement(["x1^2", "x1"], 1)
    fam = graph_complement_family(g, [-1.0], [1.0], 0.0)
    assert fam.k == 2
    assert continuity_principle_test(g, fam, 17, 17).status == "violated"


def test_affine_graph_exhaustion_examples():
    ex = graph_complement_exhaustion(GraphComplement(["x1"], 1))
    assert ex.raw(np.array([[0.0, 1.0]]))[0] == pytest.approx(1.0)


def test_exhaustion_rejects_non_affine_maps():
    with pytest.raises(ValueError):
        graph_complement_exhaustion(GraphComplement(["x1^2"], 1))
