import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zubov_lbf import net as nn
from zubov_lbf.interval import Box
from zubov_lbf.transform import BetaFamily

TANH = BetaFamily("tanh", 0.1)
EXP = BetaFamily("exp", 2.0)


def reference_forward(p, x):
    """Plain-loop evaluation used as an independent reference."""
    z = list(map(float, x))
    for ell, (W, b) in enumerate(zip(p.weights, p.biases)):
        out = []
        for i in range(W.shape[0]):
            a = b[i] + math.fsum(W[i, j] * z[j] for j in range(len(z)))
            out.append(a if ell == len(p.weights) - 1 else math.tanh(a))
        z = out
    return z[0]


def random_params(widths, seed, scale=1.0):
    p = nn.init_params(widths, seed)
    rng = np.random.default_rng(seed + 1000)
    return p.with_flat(p.flat() * scale + 0.3 * rng.normal(size=p.num_params))


def linear_net():
    return nn.MLPParams((2, 1), [np.array([[1.0, 0.0]])], [np.zeros(1)])


def zero_net(widths=(2, 5, 1)):
    p = nn.init_params(widths)
    return p.with_flat(np.zeros(p.num_params))


class TestInit:
    def test_deterministic(self):
        assert nn.init_params([2, 30, 30, 1], 4).same_as(nn.init_params([2, 30, 30, 1], 4))
        assert not nn.init_params([2, 30, 30, 1], 4).same_as(nn.init_params([2, 30, 30, 1], 5))

    def test_parameter_count(self):
        assert nn.init_params([2, 30, 30, 1]).num_params == 1051

    def test_glorot_bounds_and_zero_bias(self):
        p = nn.init_params([2, 30, 30, 1], 0)
        for W, b in zip(p.weights, p.biases):
            bound = math.sqrt(6 / (W.shape[0] + W.shape[1]))
            assert np.all(np.abs(W) <= bound)
            assert np.all(b == 0)

    @pytest.mark.parametrize("widths", [[2], [2, 3, 2], [0, 1], [2, -1, 1]])
    def test_bad_widths(self, widths):
        with pytest.raises(ValueError):
            nn.init_params(widths)

    def test_zero_weights_give_bias_path(self):
        p = nn.MLPParams((1, 1, 1), [np.zeros((1, 1)), np.zeros((1, 1))], [np.array([0.7]), np.array([0.25])])
        assert nn.forward(p, [3.0]) == 0.25

    def test_rejects_bad_shapes_and_nonfinite(self):
        with pytest.raises(ValueError):
            nn.MLPParams((2, 1), [np.zeros((2, 1))], [np.zeros(1)])
        with pytest.raises(ValueError):
            nn.MLPParams((2, 1), [np.array([[np.nan, 0.0]])], [np.zeros(1)])

    def test_flat_roundtrip(self):
        p = random_params([2, 7, 4, 1], 3)
        assert p.with_flat(p.flat()).same_as(p)


class TestForward:
    def test_zero_net(self, rng):
        assert np.all(nn.forward(zero_net(), rng.normal(size=(10, 2))) == 0)

    def test_linear_net(self):
        assert nn.forward(linear_net(), [0.5, 0.3]) == 0.5

    def test_matches_reference(self, rng):
        for seed in range(5):
            p = random_params([2, 30, 30, 1], seed)
            X = rng.uniform(-3, 3, size=(20, 2))
            y = nn.forward(p, X)
            for x, v in zip(X, y):
                assert v == pytest.approx(reference_forward(p, x), abs=1e-14, rel=1e-14)

    def test_single_point_returns_scalar(self):
        assert isinstance(nn.forward(linear_net(), [1.0, 2.0]), float)

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            nn.forward(linear_net(), np.zeros((3, 3)))


class TestInputGradient:
    def test_linear_and_zero(self, rng):
        np.testing.assert_array_equal(nn.input_gradient(linear_net(), rng.normal(size=(5, 2))),
                                      np.tile([1.0, 0.0], (5, 1)))
        assert np.all(nn.input_gradient(zero_net(), rng.normal(size=(5, 2))) == 0)

    def test_value_and_gradient_consistent(self, rng):
        p = random_params([2, 8, 8, 1], 1)
        X = rng.normal(size=(10, 2))
        y, g = nn.value_and_gradient(p, X)
        np.testing.assert_array_equal(y, nn.forward(p, X))
        np.testing.assert_array_equal(g, nn.input_gradient(p, X))

    def test_finite_differences_1000_cases(self):
        """10^3 random (params, point) pairs; central differences with step 1e-5."""
        rng = np.random.default_rng(0)
        h = 1e-5
        worst = 0.0
        for k in range(50):
            p = random_params([2, 12, 12, 1], k)
            X = rng.uniform(-2.5, 2.5, size=(20, 2))
            g = nn.input_gradient(p, X)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (nn.forward(p, X + e) - nn.forward(p, X - e)) / (2 * h)
                err = np.abs(g[:, i] - fd) / np.maximum(np.abs(g).max(axis=1), 1e-3)
                worst = max(worst, err.max())
        assert worst <= 1e-6


def make_batch(rng, n, m=12, data=8):
    X = rng.uniform(-1, 1, size=(m, n))
    return nn.Batch(collocation=X, f_tilde=-X * (1 - np.sum(X**2, axis=1, keepdims=True) / 4),
                    boundary=np.sign(rng.normal(size=(6, n))), origin=np.zeros(n),
                    data_x=rng.uniform(-1, 1, size=(data, n)), data_w=rng.uniform(0, 1, size=data))


class TestLossGradient:
    def test_zero_weights(self, rng):
        p = random_params([2, 5, 5, 1], 2)
        total, comps, g = nn.loss_and_param_gradient(p, make_batch(rng, 2), nn.LossWeights(0, 0, 0, 0), TANH)
        assert total == 0.0 and np.all(g == 0)
        assert all(v >= 0 for v in comps.values())

    @pytest.mark.parametrize("widths", [[2, 4, 1], [2, 10, 10, 1], [1, 6, 6, 1], [2, 10, 10, 10, 1]])
    @pytest.mark.parametrize("beta", [TANH, EXP], ids=["tanh", "exp"])
    def test_finite_differences(self, widths, beta):
        rng = np.random.default_rng(len(widths) * 7 + widths[-2])
        p = random_params(widths, 9)
        batch = make_batch(rng, widths[0])
        weights = nn.LossWeights(1.3, 0.7, 1.1, 0.9)
        _, _, g = nn.loss_and_param_gradient(p, batch, weights, beta)
        theta = p.flat()
        idx = rng.choice(p.num_params, size=min(20, p.num_params), replace=False)
        h = 1e-5
        for k in idx:
            e = np.zeros_like(theta)
            e[k] = h
            lp = nn.loss_and_param_gradient(p.with_flat(theta + e), batch, weights, beta, need_grad=False)[0]
            lm = nn.loss_and_param_gradient(p.with_flat(theta - e), batch, weights, beta, need_grad=False)[0]
            fd = (lp - lm) / (2 * h)
            assert abs(g[k] - fd) <= 1e-5 * max(abs(g[k]), 1e-3 * np.abs(g).max()), (k, g[k], fd)

    def test_origin_only_one_hidden_unit(self):
        """Loss W(0)^2 on W(x) = a tanh(w x + b) + c, differentiated by hand."""
        w, b, a, c = 0.8, 0.3, -1.7, 0.4
        p = nn.MLPParams((1, 1, 1), [np.array([[w]]), np.array([[a]])], [np.array([b]), np.array([c])])
        batch = nn.Batch(collocation=np.zeros((0, 1)), f_tilde=np.zeros((0, 1)), boundary=np.zeros((0, 1)),
                         origin=np.zeros(1))
        total, comps, g = nn.loss_and_param_gradient(p, batch, nn.LossWeights(0, 0, 1, 0), EXP)
        w0 = a * math.tanh(b) + c
        assert total == pytest.approx(w0**2, rel=1e-15)
        expected = 2 * w0 * np.array([0.0, a * (1 - math.tanh(b) ** 2), math.tanh(b), 1.0])
        np.testing.assert_allclose(g, expected, rtol=1e-14, atol=1e-16)

    def test_data_term_vanishes_on_own_outputs(self, rng):
        p = random_params([2, 5, 1], 0)
        X = rng.normal(size=(9, 2))
        batch = nn.Batch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(2), X, nn.forward(p, X))
        _, comps, _ = nn.loss_and_param_gradient(p, batch, nn.LossWeights(0, 0, 0, 1), TANH)
        assert comps["data"] == 0.0

    def test_components_formula(self, rng):
        p = random_params([2, 6, 1], 5)
        batch = make_batch(rng, 2)
        total, comps, _ = nn.loss_and_param_gradient(p, batch, nn.LossWeights(2, 3, 5, 7), TANH)
        Xc = batch.collocation
        y, g = nn.value_and_gradient(p, Xc)
        r = np.sum(g * batch.f_tilde, axis=1) + 0.1 * (1 + y) * (1 - y) * np.sum(Xc**2, axis=1)
        ref = {"res": np.mean(r**2), "bc": np.mean((nn.forward(p, batch.boundary) - 1) ** 2),
               "zero": nn.forward(p, np.zeros(2)) ** 2,
               "data": np.mean((nn.forward(p, batch.data_x) - batch.data_w) ** 2)}
        for k in ref:
            assert comps[k] == pytest.approx(ref[k], rel=1e-12)
        assert total == pytest.approx(2 * ref["res"] + 3 * ref["bc"] + 5 * ref["zero"] + 7 * ref["data"], rel=1e-12)

    def test_bitwise_deterministic(self, rng):
        p = random_params([2, 10, 10, 1], 1)
        batch = make_batch(rng, 2)
        g1 = nn.loss_param_gradient(p, batch, nn.LossWeights(), TANH)
        g2 = nn.loss_param_gradient(p.copy(), batch, nn.LossWeights(), TANH)
        assert np.array_equal(g1, g2)


class TestIntervals:
    def test_zero_net(self):
        iv = nn.interval_forward(zero_net(), Box.from_bounds([[-1, 1], [-1, 1]]))
        assert -1e-290 <= iv.lo <= 0 <= iv.hi <= 1e-290

    def test_linear_net(self):
        b = Box.from_bounds([[0, 1], [-1, 1]])
        iv = nn.interval_forward(linear_net(), b)
        assert iv.lo <= 0 and iv.hi >= 1 and iv.hi - iv.lo <= 1 + 1e-9
        g = nn.interval_input_gradient(linear_net(), b)
        assert g.lo.tolist() == [1.0, 0.0] and g.hi.tolist() == [1.0, 0.0]

    def test_soundness_1000_boxes_1000_samples(self):
        rng = np.random.default_rng(42)
        p = random_params([2, 10, 10, 1], 3)
        lo = rng.uniform(-3, 3, size=(1000, 2))
        boxes = Box(lo, lo + rng.uniform(0, 0.5, size=(1000, 2)) * rng.choice([0.01, 0.1, 1], size=(1000, 1)))
        val = nn.interval_forward(p, boxes)
        val_mv, grad = nn.interval_value_and_gradient(p, boxes)
        grad_only = nn.interval_input_gradient(p, boxes)
        np.testing.assert_array_equal(grad.lo, grad_only.lo)
        for chunk in np.array_split(np.arange(1000), 10):
            U = rng.uniform(size=(1000, len(chunk), 2))
            X = boxes.lo[chunk] + U * (boxes.hi[chunk] - boxes.lo[chunk])
            y, g = nn.value_and_gradient(p, X.reshape(-1, 2))
            y = y.reshape(1000, len(chunk))
            g = g.reshape(1000, len(chunk), 2)
            for iv in (val, val_mv):
                assert np.all(y >= iv.lo[chunk]) and np.all(y <= iv.hi[chunk])
            assert np.all(g >= grad.lo[chunk]) and np.all(g <= grad.hi[chunk])

    def test_mean_value_form_is_tighter(self, rng):
        p = random_params([2, 10, 10, 1], 3)
        lo = rng.uniform(-1, 1, size=(200, 2))
        boxes = Box(lo, lo + 0.01)
        plain = nn.interval_forward(p, boxes)
        tight, _ = nn.interval_value_and_gradient(p, boxes)
        assert np.all(tight.lo >= plain.lo) and np.all(tight.hi <= plain.hi)

    def test_gradient_width_shrinks_under_bisection(self):
        p = random_params([2, 10, 10, 1], 8)
        b = Box.from_bounds([[-0.5, 0.7], [0.1, 1.3]])
        parent = nn.interval_input_gradient(p, b)
        for _ in range(6):
            kids = b.bisect()
            for k in range(2):
                child = nn.interval_input_gradient(p, kids[k])
                assert np.all(child.lo >= parent.lo - 1e-12) and np.all(child.hi <= parent.hi + 1e-12)
            b = kids[0]
            parent = nn.interval_input_gradient(p, b)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), lo=st.tuples(st.floats(-3, 3), st.floats(-3, 3)),
       w=st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_interval_enclosure_property(seed, lo, w):
    p = random_params([2, 6, 6, 1], seed % 50)
    b = Box(np.array(lo), np.array(lo) + np.array(w))
    val, grad = nn.interval_value_and_gradient(p, b)
    X = b.sample(np.random.default_rng(seed), 200)
    y, g = nn.value_and_gradient(p, X)
    assert np.all(y >= val.lo) and np.all(y <= val.hi)
    assert np.all(g >= grad.lo) and np.all(g <= grad.hi)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        p = random_params([2, 30, 30, 1], 6)
        nn.save(p, tmp_path / "c.json")
        q = nn.load(tmp_path / "c.json")
        assert q.same_as(p)

    def test_file_records_metadata(self, tmp_path):
        p = nn.init_params([2, 4, 1], seed=17)
        nn.save(p, tmp_path / "c.json")
        obj = json.loads((tmp_path / "c.json").read_text())
        assert obj["version"] == nn.FORMAT_VERSION
        assert obj["widths"] == [2, 4, 1] and obj["seed"] == 17
        assert np.array(obj["weights"][0]).shape == (4, 2)

    def test_wrong_dimension(self, tmp_path):
        nn.save(nn.init_params([2, 4, 1]), tmp_path / "c.json")
        with pytest.raises(nn.CheckpointError, match="dimension"):
            nn.load(tmp_path / "c.json", n=1)

    def test_version_and_corruption(self, tmp_path):
        text = nn.dumps(nn.init_params([2, 4, 1]))
        with pytest.raises(nn.CheckpointError, match="version"):
            nn.loads(text.replace('"version": 1', '"version": 99'))
        with pytest.raises(nn.CheckpointError, match="corrupt"):
            nn.loads(text[: len(text) // 2])
        with pytest.raises(nn.CheckpointError):
            nn.loads(text.replace('"widths": [2, 4, 1]', '"widths": [2, 5, 1]'))
