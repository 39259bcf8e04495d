import json
import math

import numpy as np
import pytest

from zubov_lbf import net as nn
from zubov_lbf import verify as vf
from zubov_lbf.interval import Box
from zubov_lbf.system import Linearization, SystemSpec, h_max, linearize
from zubov_lbf.transform import BetaFamily

from conftest import make_1d, make_vdp
from test_train import square_surrogate

FAST = vf.VerifyConfig(falsify_samples=2000)


def fuzz_refutation(pred, violates, root: Box, rng, n_boxes=400, samples=100) -> int:
    """Count sampled violations inside boxes the predicate claims to refute."""
    lo = root.lo + (root.hi - root.lo) * rng.random((n_boxes, root.n))
    width = (root.hi - root.lo) * rng.random((n_boxes, root.n)) * rng.choice([0.01, 0.1, 0.5], size=(n_boxes, 1))
    boxes = Box(lo, np.minimum(lo + width, root.hi))
    refuted = np.asarray(pred(boxes), dtype=bool)
    bad = 0
    for i in np.flatnonzero(refuted):
        X = boxes[i].sample(rng, samples)
        X = np.vstack([X, boxes.lo[i], boxes.hi[i], boxes[i].center])
        bad += int(np.sum(violates(X)))
    return bad


def _small_norm_violation(X):
    return np.sum(X**2, axis=1) < 0.01


def _small_norm_interval_pred(B):
    d = B.dims
    return (d[0] ** 2 + d[1] ** 2).lo >= 0.01


def _small_norm_corner_stub(B):
    # unsound: only looks at the corners
    corners = [np.stack([a, b], axis=1) for a in (B.lo[:, 0], B.hi[:, 0]) for b in (B.lo[:, 1], B.hi[:, 1])]
    return np.all([np.sum(c**2, axis=1) >= 0.01 for c in corners], axis=0)


class TestBranchAndBound:
    def test_always_refuted(self):
        r = vf.branch_and_bound(lambda B: np.ones(len(B), bool), Box.from_bounds([[0, 1], [0, 1]]))
        assert r.outcome is vf.Outcome.CertifiedEmpty and r.boxes == 1 and r.certified

    def test_never_refuted(self):
        cfg = vf.VerifyConfig(min_box_width=0.05, max_boxes=10_000)
        r = vf.branch_and_bound(lambda B: np.zeros(len(B), bool), Box.from_bounds([[0, 1], [0, 1]]), cfg)
        assert r.outcome is vf.Outcome.Violated
        assert r.box.max_width() <= 0.05 and r.counterexample()["point"]
        cfg = vf.VerifyConfig(min_box_width=1e-9, max_boxes=100, chunk=16)
        r = vf.branch_and_bound(lambda B: np.zeros(len(B), bool), Box.from_bounds([[0, 1], [0, 1]]), cfg)
        assert r.outcome is vf.Outcome.ResourceExhausted

    def test_norm_example(self):
        r = vf.branch_and_bound(_small_norm_interval_pred, Box.from_bounds([[0.5, 1], [0.5, 1]]))
        assert r.outcome is vf.Outcome.CertifiedEmpty

    def test_norm_example_finds_violation_near_origin(self):
        r = vf.branch_and_bound(_small_norm_interval_pred, Box.from_bounds([[-1, 1], [-1, 1]]))
        assert r.outcome is vf.Outcome.Violated
        assert np.sum(r.point**2) < 0.02

    def test_needs_splitting_then_certifies(self):
        # x*x is evaluated without the dependency, so [-1, 1] gives [-1, 1] until split
        def pred(B):
            x = B.dims[0]
            return (x * x).lo > -0.5

        r = vf.branch_and_bound(pred, Box.from_bounds([[-1, 1]]))
        assert r.certified and r.boxes > 1

    def test_scalar_predicate_mode_matches(self):
        root = Box.from_bounds([[-1, 1], [0.2, 1]])
        a = vf.branch_and_bound(_small_norm_interval_pred, root)
        b = vf.branch_and_bound(lambda B: bool(_small_norm_interval_pred(Box(B.lo[None], B.hi[None]))[0]),
                                root, vectorized=False)
        assert a.outcome == b.outcome and a.boxes == b.boxes

    def test_deterministic(self):
        root = Box.from_bounds([[-1, 1], [-1, 1]])
        a = vf.branch_and_bound(_small_norm_interval_pred, root)
        b = vf.branch_and_bound(_small_norm_interval_pred, root)
        assert a.boxes == b.boxes and np.array_equal(a.point, b.point)


class TestSoundnessMetaTest:
    def test_interval_predicate_passes_fuzz(self, rng):
        root = Box.from_bounds([[-1, 1], [-1, 1]])
        assert fuzz_refutation(_small_norm_interval_pred, _small_norm_violation, root, rng) == 0

    def test_sampling_stub_is_caught(self, rng):
        root = Box.from_bounds([[-1, 1], [-1, 1]])
        assert fuzz_refutation(_small_norm_corner_stub, _small_norm_violation, root, rng) > 0
        # and branch and bound with the stub reports a bogus certificate, which the fuzz exposes
        assert vf.branch_and_bound(_small_norm_corner_stub, root).certified

    def test_quadratic_and_lie_enclosures_pass_fuzz(self, vdp2, rng):
        P = linearize(vdp2).P
        p = nn.init_params([2, 8, 8, 1], 3)
        root = vdp2.roi

        def pred(B):
            w, g = nn.interval_value_and_gradient(p, B)
            from zubov_lbf.system import interval_field
            lie = vf._lie_interval(g, interval_field(vdp2, B))
            return (lie.hi < 0) & (vf._quad_interval(P, B).lo > 0.5) & (w.lo > -5)

        def violates(X):
            from zubov_lbf.system import field_eval
            w, g = nn.value_and_gradient(p, X)
            return ~((np.sum(g * field_eval(vdp2, X), axis=1) < 0)
                     & (np.einsum("ij,jk,ik->i", X, P, X) > 0.5) & (w > -5))

        assert fuzz_refutation(pred, violates, root, rng, n_boxes=1000) == 0


class TestInnerQuadratic:
    def test_linear_1d(self):
        s = make_1d()
        lin = linearize(s)
        r = vf.verify_inner_quadratic(s, lin, 0.1)
        assert r.certified and r.C <= 1e-9
        assert r.mu == pytest.approx(1.0, abs=1e-9)
        assert r.rho == pytest.approx(0.005)

    def test_vdp(self, vdp2):
        lin = linearize(vdp2)
        r = vf.verify_inner_quadratic(vdp2, lin, 0.1)
        assert r.certified and r.C <= 0.03
        assert -1 + 2 * 1.8090169943749475 * r.C == pytest.approx(-r.mu, rel=1e-9)
        assert r.rho == pytest.approx(0.01 * np.linalg.eigvalsh(lin.P).min())

    def test_vdp_large_radius_fails(self, vdp2):
        r = vf.verify_inner_quadratic(vdp2, linearize(vdp2), 2.0)
        assert not r.certified and ">= 0" in r.message

    def test_ball_must_be_safe(self):
        s = SystemSpec.from_strings(["-x1"], ["0.99 + 10*x1^2"], [[-1, 1]])
        r = vf.verify_inner_quadratic(s, linearize(s), 0.1)
        assert not r.certified and "obstacle" in r.message


@pytest.fixture(scope="module")
def surrogate():
    return square_surrogate()


class TestStages1D:
    def test_bridge(self, surrogate):
        s = make_1d()
        lin = linearize(s)
        assert vf.verify_bridge(surrogate, s, lin, 0.005, 0.005, FAST).certified
        assert not vf.verify_bridge(surrogate, s, lin, 0.5, 0.005, FAST).certified
        assert vf.verify_bridge(surrogate, s, lin, 0.0, 0.005, FAST).certified

    def test_bridge_zero_net(self):
        s = make_1d()
        zero = nn.init_params([1, 3, 1]).with_flat(np.zeros(10))
        r = vf.verify_bridge(zero, s, linearize(s), 0.1, 0.005, FAST)
        assert r.outcome is vf.Outcome.Violated and "bridge" in r.predicate

    def test_decrease(self, surrogate):
        s = make_1d()
        assert vf.verify_decrease(surrogate, s, 0.005, 0.8, FAST).certified
        bad = vf.verify_decrease(surrogate, s, 0.005, 0.8, vf.VerifyConfig(delta=10.0, falsify_samples=2000))
        assert bad.outcome in (vf.Outcome.Violated, vf.Outcome.ResourceExhausted)
        assert vf.verify_decrease(surrogate, s, 0.3, 0.3, FAST).boxes == 0

    def test_separation(self, surrogate):
        s = make_1d()
        assert vf.verify_separation(surrogate, s, 0.0, FAST).certified
        assert vf.verify_separation(surrogate, s, 0.95, FAST).certified
        r = vf.verify_separation(surrogate, s, 0.9999, FAST)
        assert not r.certified

    def test_separation_shell_violation(self):
        # no obstacles, W = x^2 / 4 never reaches 1 on the boundary
        s = SystemSpec.from_strings(["-x1"], [], [[-1, 1]])
        p = square_surrogate()
        p = p.with_flat(np.concatenate([p.flat()[:4], p.flat()[4:6] / 4, p.flat()[6:] / 4]))
        r = vf.verify_separation(p, s, 0.3, FAST)
        assert r.outcome is vf.Outcome.Violated and "shell" in r.predicate

    def test_shell_boxes(self):
        roi = Box.from_bounds([[-2.5, 2.5], [-3.5, 3.5]])
        sh = vf.shell_boxes(roi, 0.1)
        assert len(sh) == 4
        np.testing.assert_allclose(sh.hi[0], [-2.4, 3.5])
        np.testing.assert_allclose(sh.lo[3], [-2.5, 3.4])


@pytest.fixture(scope="module")
def report_1d(surrogate):
    s = make_1d()
    return vf.bisect_levels(surrogate, s, linearize(s), vf.VerifyConfig())


class TestBisectLevels:
    def test_certified(self, report_1d):
        r = report_1d
        assert r.status is vf.ReportStatus.Certified
        assert 0 < r.c1 < r.c2 < 1 and r.rho_quad > 0
        assert r.c2 >= 0.7
        assert r.delta == 1e-4 and r.eta == 1e-12
        assert sum(r.boxes.values()) > 0 and r.counterexample is None
        assert r.rho_q is not None and r.rho_q > 0

    def test_monotone(self, report_1d, surrogate):
        s = make_1d()
        r = report_1d
        for c in np.linspace(r.c1, r.c2, 5)[1:-1]:
            assert vf.verify_levels(surrogate, s, linearize(s), r.c1, c, r.rho_quad)

    def test_deterministic(self, report_1d, surrogate):
        s = make_1d()
        again = vf.bisect_levels(surrogate, s, linearize(s), vf.VerifyConfig())
        assert again.to_json() == report_1d.to_json()

    def test_json_fields(self, report_1d):
        obj = json.loads(report_1d.to_json())
        for key in ("status", "rho_quad", "c1", "c2", "delta", "eta", "boxes", "counterexample", "wall_time_s"):
            assert key in obj
        assert set(obj["boxes"]) == {"bridge", "decrease", "separation"}
        assert vf.CertificationReport.from_dict(obj).to_json() == report_1d.to_json()

    def test_random_net_fails(self, vdp2):
        p = nn.init_params([2, 10, 10, 1], 0)
        r = vf.bisect_levels(p, vdp2, linearize(vdp2), vf.VerifyConfig(), baseline=False)
        assert r.status is vf.ReportStatus.Failed
        assert r.counterexample and r.counterexample["predicate"]

    def test_audit_of_certified_set(self, report_1d, surrogate):
        """Sampled states with W <= c2 satisfy the decrease and separation claims."""
        s = make_1d()
        X = np.linspace(-1, 1, 20001)[:, None]
        w, g = nn.value_and_gradient(surrogate, X)
        inside = w <= report_1d.c2
        assert np.all(h_max(s, X[inside]) < 1)
        annulus = inside & (w >= report_1d.c1) & (X[:, 0] ** 2 / 2 >= report_1d.rho_quad)
        assert np.all(g[annulus, 0] * -X[annulus, 0] < 0)


class TestQuadraticBaseline:
    def test_1d_geometry(self):
        s = SystemSpec.from_strings(["-x1"], ["x1^2"], [[-2, 2]])
        rq = vf.quadratic_baseline(s, linearize(s), FAST)
        # {x^2/2 <= rho} must stay inside |x| < sqrt(1 - clearance)
        assert 0.49 < rq < 0.5 * (1 - 1e-3)

    def test_vdp_single_obstacle(self, vdp1):
        lin = linearize(vdp1)
        rq = vf.quadratic_baseline(vdp1, lin, FAST)
        assert rq is not None and rq > 0
        # grid pre-estimate: smallest x'Px on the clearance region of the obstacle
        g = np.linspace(0.6, 1.4, 801)
        X = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        near = X[h_max(vdp1, X) >= 1 - 1e-3]
        assert rq <= np.min(np.einsum("ij,jk,ik->i", near, lin.P, near))

    def test_vdp_certified_ellipse_sampled(self, vdp2):
        lin = linearize(vdp2)
        rq = vf.quadratic_baseline(vdp2, lin, FAST)
        X = vdp2.roi.sample(np.random.default_rng(0), 200_000)
        q = np.einsum("ij,jk,ik->i", X, lin.P, X)
        inside = X[q <= rq]
        assert len(inside) > 100
        assert np.all(h_max(vdp2, inside) < 1)
        from zubov_lbf.system import field_eval
        lie = 2 * np.einsum("ij,jk,ik->i", inside, lin.P, field_eval(vdp2, inside))
        assert np.all(lie[np.max(np.abs(inside), axis=1) >= 0.1] < 0)

    def test_obstacle_at_origin_margin(self):
        s = SystemSpec.from_strings(["-x1"], ["0.99 + 10*x1^2"], [[-1, 1]])
        assert vf.quadratic_baseline(s, linearize(s), FAST) is None


class TestConfig:
    def test_defaults(self):
        c = vf.VerifyConfig()
        assert c.delta == 1e-4 and c.min_box_width == 1e-3 and c.inner_radius == 0.1

    @pytest.mark.parametrize("kw", [{"delta": 0}, {"min_box_width": 0}, {"inner_radius": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            vf.VerifyConfig(**kw)

    def test_dict_roundtrip(self):
        c = vf.VerifyConfig(delta=1e-3, max_boxes=5)
        assert vf.VerifyConfig.from_dict(c.to_dict()) == c
