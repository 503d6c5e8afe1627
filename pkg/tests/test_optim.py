"""Optimizer and clipping checks against hand-computed updates."""

import numpy as np
import pytest

from thinseg.errors import ContractError
from thinseg.optim import AdamW, clip_global_norm
from thinseg.rng import Rng
from thinseg.tensor import Tensor


def param(value):
    t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
    return t


class TestClipGlobalNorm:
    def test_below_threshold_untouched(self):
        p = param([3.0, 4.0])
        p.grad = np.array([3.0, 4.0], dtype=np.float32)  # norm 5
        norm, clipped = clip_global_norm([p], max_norm=5.0)
        assert norm == 5.0
        assert not clipped
        assert np.array_equal(p.grad, [3.0, 4.0])

    def test_scales_to_max_norm(self):
        a, b = param([0.0]), param([0.0])
        a.grad = np.array([6.0], dtype=np.float32)
        b.grad = np.array([8.0], dtype=np.float32)  # joint norm 10
        norm, clipped = clip_global_norm([a, b], max_norm=5.0)
        assert abs(norm - 10.0) < 1e-6
        assert clipped
        joint = np.sqrt(float(a.grad[0]) ** 2 + float(b.grad[0]) ** 2)
        assert abs(joint - 5.0) < 1e-5
        assert abs(a.grad[0] - 3.0) < 1e-5
        assert abs(b.grad[0] - 4.0) < 1e-5

    def test_skips_gradless_params(self):
        a, b = param([1.0]), param([1.0])
        a.grad = np.array([10.0], dtype=np.float32)
        norm, clipped = clip_global_norm([a, b], max_norm=5.0)
        assert clipped
        assert b.grad is None

    def test_zero_gradients(self):
        p = param([1.0])
        p.grad = np.zeros(1, dtype=np.float32)
        norm, clipped = clip_global_norm([p], max_norm=5.0)
        assert norm == 0.0 and not clipped


class TestAdamW:
    def test_first_step_closed_form(self):
        """After one step the bias corrections cancel: the update is
        -lr * (g/(|g|+eps) + wd*theta)."""
        theta0, g = 2.0, 0.5
        p = param([theta0])
        p.grad = np.array([g], dtype=np.float32)
        opt = AdamW([("p", p)], lr=0.1, weight_decay=0.01)
        opt.step()
        want = theta0 - 0.1 * (g / (abs(g) + 1e-8) + 0.01 * theta0)
        assert abs(p.data[0] - want) < 1e-6

    def test_two_steps_closed_form(self):
        theta, g1, g2 = 1.0, 0.3, -0.2
        lr, wd, b1, b2, eps = 0.05, 0.01, 0.9, 0.999, 1e-8
        p = param([theta])
        opt = AdamW([("p", p)], lr=lr, weight_decay=wd)
        m = v = 0.0
        for t, g in ((1, g1), (2, g2)):
            p.grad = np.array([g], dtype=np.float32)
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            theta = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * theta)
            assert abs(p.data[0] - theta) < 1e-6

    def test_decay_only_shrinks_parameters(self):
        """Zero gradient leaves only the decoupled decay term."""
        p = param([10.0])
        p.grad = np.zeros(1, dtype=np.float32)
        opt = AdamW([("p", p)], lr=0.1, weight_decay=0.5)
        opt.step()
        assert abs(p.data[0] - (10.0 - 0.1 * 0.5 * 10.0)) < 1e-6

    def test_none_gradient_is_a_no_op(self):
        p = param([3.0])
        opt = AdamW([("p", p)], lr=0.1)
        opt.step()
        assert p.data[0] == 3.0
        assert opt.t == 1  # time still advances
        assert np.array_equal(opt.m["p"], np.zeros(1, dtype=np.float32))

    def test_defaults(self):
        p = param([0.0])
        opt = AdamW([("p", p)])
        assert opt.lr == 5e-4
        assert opt.weight_decay == 1e-3
        assert (opt.beta1, opt.beta2, opt.eps) == (0.9, 0.999, 1e-8)

    def test_shape_mismatch_rejected(self):
        p = param([1.0, 2.0])
        p.grad = np.zeros(3, dtype=np.float32)
        opt = AdamW([("p", p)])
        with pytest.raises(ContractError):
            opt.step()

    def test_state_round_trip(self):
        rng = Rng(411)
        p = param(rng.normal(4).astype(np.float32))
        q = param(rng.normal(4).astype(np.float32))
        opt = AdamW([("p", p), ("q", q)], lr=0.01)
        for _ in range(3):
            p.grad = rng.normal(4).astype(np.float32)
            q.grad = rng.normal(4).astype(np.float32)
            opt.step()
        state = {k: v.copy() for k, v in opt.state_arrays().items()}
        assert set(state) == {"m/p", "v/p", "m/q", "v/q"}
        fresh = AdamW([("p", p), ("q", q)], lr=0.01)
        fresh.load_state_arrays(state)
        for name in ("p", "q"):
            assert np.array_equal(fresh.m[name], opt.m[name])
            assert np.array_equal(fresh.v[name], opt.v[name])

    def test_resumed_run_matches_uninterrupted(self):
        """Same gradients, with a save/load in the middle: identical result."""
        rng = Rng(412)
        grads = [rng.normal(3).astype(np.float32) for _ in range(6)]

        def run(split=None):
            p = param(np.ones(3, dtype=np.float32))
            opt = AdamW([("p", p)], lr=0.02, weight_decay=0.1)
            for i, g in enumerate(grads):
                if split is not None and i == split:
                    state = {k: v.copy()
                             for k, v in opt.state_arrays().items()}
                    t = opt.t
                    opt = AdamW([("p", p)], lr=0.02, weight_decay=0.1)
                    opt.load_state_arrays(state)
                    opt.t = t
                p.grad = g.copy()
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run(split=3))
