import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jitagg.model import (EpochTime, FLJobSpec, FusionKind, Hardware, ModelUpdate,
                          PartialAggregate, PartyMode, PartyProfile, PerEpoch, ShapeMismatchError,
                          check_shape, finalize, fuse_pair, lift, microbench_t_pair, random_update,
                          tree_fold, validate_roster)


def direct_mean(updates, kind=FusionKind.WEIGHTED_MEAN):
    # independent oracle: sum_i w_i x_i / sum_i w_i, accumulated in long double
    w = [u.sample_weight if kind is FusionKind.WEIGHTED_MEAN else 1.0 for u in updates]
    out = []
    for layer in range(len(updates[0].layers)):
        acc = sum(np.longdouble(wi) * u.layers[layer].astype(np.longdouble)
                  for wi, u in zip(w, updates))
        out.append((acc / np.longdouble(sum(w))).astype(np.float64))
    return out


def upd(pid, layers, w=1.0):
    return ModelUpdate(pid, 0, [np.asarray(v, dtype=float) for v in layers], w)


def rel_err(a, b):
    # layer-wise relative error in the max norm, robust to near-zero coordinates
    return max(float(np.max(np.abs(x - y)) / max(np.max(np.abs(y)), 1e-300)) for x, y in zip(a, b))


# -- worked examples --------------------------------------------------------

def test_weighted_mean_two_updates():
    u1 = upd("a", [[1.0, 2.0]], 1.0)
    u2 = upd("b", [[3.0, 6.0]], 3.0)
    g = finalize(fuse_pair(lift(u1), lift(u2)))
    np.testing.assert_allclose(g.layers[0], [2.5, 5.0])
    assert g.contributing_parties == 2


def test_plain_mean_ignores_weights():
    u1 = upd("a", [[1.0]], 1.0)
    u2 = upd("b", [[3.0]], 100.0)
    k = FusionKind.MEAN
    g = finalize(fuse_pair(lift(u1, k), lift(u2, k)), k)
    np.testing.assert_allclose(g.layers[0], [2.0])


def test_single_update_round_trips_exactly():
    rng = np.random.default_rng(3)
    u = random_update([7, 3], rng, sample_weight=0.37)
    g = finalize(lift(u))
    for a, b in zip(g.layers, u.layers):
        assert np.array_equal(a, b)


def test_empty_is_identity():
    u = lift(upd("a", [[1.0, -2.0]], 2.0))
    e = PartialAggregate.empty([2])
    for got in (fuse_pair(u, e), fuse_pair(e, u)):
        assert got.total_weight == u.total_weight and got.updates_absorbed == 1
        np.testing.assert_array_equal(got.weighted_sum[0], u.weighted_sum[0])


def test_fuse_does_not_alias_inputs():
    a = lift(upd("a", [[1.0]]))
    b = lift(upd("b", [[2.0]]))
    c = fuse_pair(a, b)
    c.weighted_sum[0][0] = 99.0
    assert a.weighted_sum[0][0] == 1.0 and b.weighted_sum[0][0] == 2.0


def test_shape_mismatch_reports_layer():
    a = lift(upd("a", [[1.0, 2.0], [1.0]]))
    b = lift(upd("b", [[1.0, 2.0], [1.0, 2.0]]))
    with pytest.raises(ShapeMismatchError) as exc:
        fuse_pair(a, b)
    assert exc.value.layer == 1
    with pytest.raises(ShapeMismatchError):
        fuse_pair(a, lift(upd("c", [[1.0, 2.0]])))


def test_check_shape():
    check_shape([np.zeros(3), np.zeros(2)], (3, 2))
    with pytest.raises(ShapeMismatchError) as exc:
        check_shape([np.zeros(3), np.zeros(4)], (3, 2))
    assert exc.value.layer == 1


def test_finalize_errors():
    with pytest.raises(ValueError):
        finalize(PartialAggregate.empty([3]))
    p = fuse_pair(lift(upd("a", [[1.0]])), lift(upd("b", [[1.0]])))
    with pytest.raises(ValueError):
        finalize(p, quorum=3)
    assert finalize(p, quorum=2).contributing_parties == 2


def test_update_requires_positive_weight():
    with pytest.raises(ValueError):
        upd("a", [[1.0]], 0.0)


def test_job_and_party_validation():
    with pytest.raises(ValueError):
        FLJobSpec("j", 0, PerEpoch(), 0, 1, 1)
    with pytest.raises(ValueError):
        FLJobSpec("j", 10, PerEpoch(), 0, 0, 1)
    with pytest.raises(ValueError):
        PartyProfile("p", PartyMode.ACTIVE, Hardware(3, 4), 10, 1, 1)
    with pytest.raises(ValueError):
        PartyProfile("p", PartyMode.ACTIVE, Hardware(2, 5), 10, 1, 1)
    with pytest.raises(ValueError):
        PartyProfile("p", PartyMode.ACTIVE, EpochTime(1.0), 10, 0, 1)
    job = FLJobSpec("j", 10, PerEpoch(), 0, 3, 1)
    ps = [PartyProfile(f"p{i}", PartyMode.ACTIVE, EpochTime(1.0), 10, 1, 1) for i in range(2)]
    with pytest.raises(ValueError, match="quorum"):
        validate_roster(job, ps)
    inter = [PartyProfile("q", PartyMode.INTERMITTENT, EpochTime(1.0), 10, 1, 1)]
    with pytest.raises(ValueError, match="t_wait"):
        validate_roster(FLJobSpec("j", 10, PerEpoch(), 0, 1, 1), inter)
    with pytest.raises(ValueError, match="duplicate"):
        validate_roster(FLJobSpec("j", 10, PerEpoch(), 0, 1, 1), ps[:1] * 2)


def test_tree_fold_matches_oracle():
    rng = np.random.default_rng(11)
    us = [random_update([5, 2], rng, str(i), sample_weight=float(i + 1)) for i in range(9)]
    g = finalize(tree_fold([lift(u) for u in us]))
    assert rel_err(g.layers, direct_mean(us)) < 1e-12


def test_microbench_contract():
    t = microbench_t_pair([64, 32], trials=11)
    assert t > 0
    with pytest.raises(ValueError):
        microbench_t_pair([64], trials=5)
    with pytest.raises(ValueError):
        microbench_t_pair([])
    with pytest.raises(ValueError):
        microbench_t_pair([0, 4])
    assert microbench_t_pair([1000], cores=2) > 0


# -- properties -------------------------------------------------------------

shapes = st.lists(st.integers(1, 6), min_size=1, max_size=4)


@st.composite
def update_sets(draw, max_n=12):
    shape = draw(shapes)
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 50.0, n)
    return [random_update(shape, rng, f"p{i}", sample_weight=float(w)) for i, w in enumerate(weights)]


@settings(max_examples=60, deadline=None)
@given(update_sets(), st.randoms(use_true_random=False), st.sampled_from(list(FusionKind)))
def test_any_fold_order_matches_direct_formula(updates, rnd, kind):
    parts = [lift(u, kind) for u in updates]
    rnd.shuffle(parts)
    # random binary merge tree
    while len(parts) > 1:
        i = rnd.randrange(len(parts) - 1)
        parts[i:i + 2] = [fuse_pair(parts[i], parts[i + 1])]
    g = finalize(parts[0], kind)
    assert g.contributing_parties == len(updates)
    assert rel_err(g.layers, direct_mean(updates, kind)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(update_sets(max_n=6))
def test_fuse_pair_commutative_and_associative(updates):
    while len(updates) < 3:
        updates = updates + updates[:1]
    a, b, c = (lift(u) for u in updates[:3])
    ab, ba = fuse_pair(a, b), fuse_pair(b, a)
    for x, y in zip(ab.weighted_sum, ba.weighted_sum):
        assert np.array_equal(x, y)
    left, right = fuse_pair(fuse_pair(a, b), c), fuse_pair(a, fuse_pair(b, c))
    assert left.total_weight == pytest.approx(right.total_weight, rel=1e-15)
    for x, y in zip(left.weighted_sum, right.weighted_sum):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(update_sets(max_n=8))
def test_weight_and_count_are_additive(updates):
    p = tree_fold([lift(u) for u in updates])
    assert p.updates_absorbed == len(updates)
    assert p.total_weight == pytest.approx(sum(u.sample_weight for u in updates), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(update_sets(max_n=5))
def test_permuted_fold_equal_weights_mean(updates):
    k = FusionKind.MEAN
    fwd = finalize(tree_fold([lift(u, k) for u in updates]), k)
    rev = finalize(tree_fold([lift(u, k) for u in reversed(updates)]), k)
    assert rel_err(fwd.layers, rev.layers) < 1e-12
