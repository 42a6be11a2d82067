import math

import numpy as np
import pytest
from gradcheck import check

from terrecon.errors import ContractError
from terrecon.nn import (
    AdamState,
    BatchNormState,
    NonFiniteGradient,
    adam_step,
    batch_norm,
    elu,
    lr_schedule,
    occupancy_bce_loss,
    offset_loss,
    sigmoid,
)
from terrecon.sparse import SparseTensor, Var


def line_coords(n):
    return np.c_[np.arange(n), np.zeros((n, 3), int)]


def lik(p):
    p = np.asarray(p, float)
    return SparseTensor(line_coords(len(p)), Var(p[:, None], True))


# -- batch norm ----------------------------------------------------------------------


def test_bn_constant_batch_is_zero():
    st = BatchNormState.create(2, np.float64)
    out = batch_norm(Var(np.full((5, 2), 3.0)), st)
    np.testing.assert_allclose(out.data, 0)


def test_bn_unit_pair_is_preserved():
    st = BatchNormState.create(1, np.float64)
    out = batch_norm(Var(np.array([[-1.0], [1.0]])), st)
    np.testing.assert_allclose(out.data[:, 0], [-1, 1], atol=1e-4)


def test_bn_eval_identity_and_no_mutation(rng):
    st = BatchNormState.create(3, np.float64, training=False)
    x = rng.normal(size=(7, 3))
    out = batch_norm(Var(x), st)
    np.testing.assert_allclose(out.data, x, atol=1e-4)
    np.testing.assert_array_equal(st.running_mean, 0)
    np.testing.assert_array_equal(st.running_var, 1)
    np.testing.assert_array_equal(batch_norm(Var(x), st).data, out.data)


def test_bn_train_updates_running_stats(rng):
    st = BatchNormState.create(2, np.float64)
    x = rng.normal(3.0, 2.0, size=(50, 2))
    batch_norm(Var(x), st)
    np.testing.assert_allclose(st.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(st.running_var, 0.9 + 0.1 * x.var(0, ddof=1))


def test_bn_errors():
    st = BatchNormState.create(2)
    with pytest.raises(ContractError):
        batch_norm(Var(np.zeros((0, 2))), st)
    with pytest.raises(ContractError):
        batch_norm(Var(np.zeros((3, 3))), st)


@pytest.mark.parametrize("training", [True, False])
def test_bn_gradcheck(rng, training):
    st = BatchNormState.create(3, np.float64, training=training)
    st.gamma.data[:] = rng.normal(size=3)
    st.beta.data[:] = rng.normal(size=3)
    st.running_mean[:] = rng.normal(size=3)
    st.running_var[:] = rng.random(3) + 0.5
    x = Var(rng.normal(size=(17, 3)), True)
    check(lambda: batch_norm(x, st), [x, st.gamma, st.beta], rng)


# -- activations ------------------------------------------------------------------------


def test_elu_examples():
    np.testing.assert_allclose(elu(np.array([0.0, 1.0, -1.0])), [0.0, 1.0, math.exp(-1) - 1])
    assert elu(np.array([-1.0]))[0] == pytest.approx(-0.6321, abs=1e-4)


def test_sigmoid_examples():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    for x in (0.5, 2.0, 10.0):
        assert sigmoid(np.array([-x]))[0] == pytest.approx(1 - sigmoid(np.array([x]))[0], abs=1e-15)


def test_sigmoid_is_stable_for_large_inputs():
    s = sigmoid(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(s)) and 0 < s[0] < 1e-300 and 1 - 1e-15 < s[1] < 1


# -- losses ----------------------------------------------------------------------------


def test_bce_examples():
    assert occupancy_bce_loss(lik([1 - 1e-7]), [True]).item() == pytest.approx(0, abs=1e-6)
    assert occupancy_bce_loss(lik([0.5, 0.5]), [True, False]).item() == pytest.approx(math.log(2))
    assert occupancy_bce_loss(lik([1e-7]), [True]).item() == pytest.approx(16.118, abs=1e-3)
    assert occupancy_bce_loss(lik([0.0]), [True]).item() == pytest.approx(-math.log(1e-7))


def test_bce_accepts_coordinate_set():
    p = lik([0.9, 0.2])
    by_set = occupancy_bce_loss(p, {(0, 0, 0, 0)}).item()
    by_mask = occupancy_bce_loss(p, [True, False]).item()
    assert by_set == by_mask


def test_bce_empty_contributes_zero():
    out = occupancy_bce_loss(lik([]), [])
    assert out.empty and out.item() == 0


def test_bce_gradcheck(rng):
    p = lik(rng.uniform(0.05, 0.95, 20))
    y = rng.random(20) < 0.5
    check(lambda: occupancy_bce_loss(p, y).value, [p.feats], rng)


def _c3(coords, feats):
    return SparseTensor(np.asarray(coords), Var(np.asarray(feats, float), True))


def test_offset_examples():
    t = _c3(line_coords(3), np.eye(3))
    assert offset_loss(t, t).item() == 0
    one = offset_loss(_c3([[0, 0, 0, 0]], [[0, 0, 0]]), _c3([[0, 0, 0, 0]], [[1, 0, 0]]))
    assert one.item() == 1
    two = offset_loss(_c3(line_coords(2), [[0, 0, 0], [0, 0, 0]]), _c3(line_coords(2), [[0, 0, 0], [1, 0, 0]]))
    assert two.item() == 0.5


def test_offset_only_matched_coords():
    pred = _c3([[0, 0, 0, 0], [9, 0, 0, 0]], [[0.5, 0.5, 0.5], [0, 0, 0]])
    target = _c3([[0, 0, 0, 0], [5, 0, 0, 0]], [[0.5, 0.5, 0.5], [1, 1, 1]])
    assert offset_loss(pred, target).item() == 0
    empty = offset_loss(_c3([[1, 1, 1, 0]], [[0, 0, 0]]), target)
    assert empty.empty and empty.item() == 0


def test_offset_gradcheck(rng):
    c = line_coords(20)
    pred = _c3(c[rng.permutation(20)[:15]], rng.random((15, 3)))
    target = SparseTensor(c, rng.random((20, 3)))
    check(lambda: offset_loss(pred, target).value, [pred.feats], rng)


# -- optimizer and schedule ----------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.5, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.01)
    np.testing.assert_array_equal(p["w"], [1.5, -2.0])


def test_adam_first_step():
    p = {"w": np.zeros(1)}
    adam_step(p, {"w": np.ones(1)}, AdamState(), 0.01)
    assert p["w"][0] == pytest.approx(-0.01, rel=1e-5)


def test_adam_first_step_scale_invariant(rng):
    g = rng.normal(size=5)
    a, b = {"w": np.zeros(5)}, {"w": np.zeros(5)}
    adam_step(a, {"w": g}, AdamState(), 0.01)
    adam_step(b, {"w": 10 * g}, AdamState(), 0.01)
    np.testing.assert_allclose(a["w"], b["w"], atol=1e-6)


def test_adam_non_finite_gradient_skips_step():
    p = {"w": np.ones(2), "b": np.ones(1)}
    st = AdamState()
    with pytest.raises(NonFiniteGradient):
        adam_step(p, {"w": np.array([1.0, np.nan]), "b": np.ones(1)}, st, 0.01)
    assert st.step == 0 and not st.m
    np.testing.assert_array_equal(p["w"], 1)
    np.testing.assert_array_equal(p["b"], 1)


def test_adam_shape_mismatch():
    with pytest.raises(ContractError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.01)


def test_adam_moments_nonnegative(rng):
    p = {"w": rng.normal(size=10)}
    st = AdamState()
    for _ in range(20):
        adam_step(p, {"w": rng.normal(size=10)}, st, 0.01)
    assert st.step == 20 and np.all(st.v["w"] >= 0)


def test_lr_schedule_values():
    assert lr_schedule(0) == pytest.approx(0.01, abs=1e-15)
    assert lr_schedule(39) == pytest.approx(1e-4, abs=1e-9)
    gamma = (1e-4 / 1e-2) ** (1 / 39)
    assert gamma == pytest.approx(0.8886, abs=1e-4)
    assert lr_schedule(20) == pytest.approx(0.01 * gamma**20, rel=1e-12)
    assert lr_schedule(20) == pytest.approx(9.4e-4, rel=0.01)


def test_lr_schedule_monotone_and_bounds():
    lrs = [lr_schedule(e) for e in range(40)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ContractError):
        lr_schedule(40)
    with pytest.raises(ContractError):
        lr_schedule(-1)


def test_bn_eval_with_input_statistics(rng):
    st = BatchNormState.create(2, np.float64, eval_stats="input")
    x = rng.normal(2.0, 3.0, size=(40, 2))
    train_out = batch_norm(Var(x), BatchNormState.create(2, np.float64)).data
    st.training = False
    out = batch_norm(Var(x), st).data
    np.testing.assert_allclose(out, train_out)
    np.testing.assert_array_equal(st.running_mean, 0)
    with pytest.raises(ContractError):
        BatchNormState.create(2, eval_stats="batch")
