import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfmcps.core import Box, InputError, make_rng
from mfmcps.optim import (
    DegenerateUpdateError,
    ErrorBudgetExceeded,
    OptimizerConfig,
    OptimizerState,
    RiskConfig,
    StepSchedule,
    mcpg_step,
    mcpn_step,
    project_box,
    project_inverse,
    project_psd,
    run_optimizer,
    woodbury_inverse_update,
    woodbury_step,
)
from mfmcps.perturb import FunctionEvaluator, PerturbationKind

RAD = PerturbationKind.RADEMACHER
UNIT = Box.uniform(0.0, 1.0, 1)


def shifted(th):
    return float((th[0] - 0.06) ** 2)


class TestProjections:
    def test_box_interior(self):
        assert project_box([0.5], UNIT)[0] == 0.5

    def test_box_clamp(self):
        assert project_box([1.7], UNIT)[0] == 1.0

    def test_box_per_coordinate(self):
        np.testing.assert_array_equal(project_box([-0.3, 0.4], Box.uniform(0, 1, 2)), [0.0, 0.4])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=4))
    def test_box_idempotent_nonexpansive(self, v):
        box = Box.uniform(-1, 1, len(v))
        p = project_box(v, box)
        np.testing.assert_array_equal(project_box(p, box), p)
        q = project_box(np.zeros(len(v)), box)
        assert np.max(np.abs(p - q)) <= np.max(np.abs(np.asarray(v))) + 1e-15

    def test_psd_unchanged(self):
        np.testing.assert_allclose(project_psd(np.diag([2.0, 3.0]), 0.1), np.diag([2.0, 3.0]), atol=1e-14)

    def test_psd_scalar(self):
        assert project_psd([[-5.0]], 0.1)[0, 0] == 0.1

    def test_psd_hand_example(self):
        out = project_psd([[0.0, 1.0], [1.0, 0.0]], 0.5)
        np.testing.assert_allclose(out, [[0.75, 0.25], [0.25, 0.75]], atol=1e-14)

    def test_psd_non_finite(self):
        with pytest.raises(InputError):
            project_psd([[np.nan]], 0.1)

    @settings(max_examples=50)
    @given(st.integers(1, 5), st.integers(0, 10_000), st.floats(0.01, 2.0))
    def test_psd_floor(self, N, seed, omega):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(N, N)) * 3
        out = project_psd(B + B.T, omega)
        assert np.array_equal(out, out.T) or np.allclose(out, out.T, atol=1e-12)
        assert np.linalg.eigvalsh(out).min() >= omega - 1e-9

    @settings(max_examples=50)
    @given(st.integers(1, 5), st.integers(0, 10_000))
    def test_inverse_cap(self, N, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(N, N)) * 5
        w = np.linalg.eigvalsh(project_inverse(B, 0.1))
        assert w.min() > 0 and w.max() <= 10.0 + 1e-9


class TestSchedules:
    def test_harmonic(self):
        s = StepSchedule()
        assert s.kind == "harmonic" and s(1) == 1.0 and s(4) == 0.25

    def test_power_law(self):
        assert StepSchedule(2.0, 0.75).kind == "power-law"

    @pytest.mark.parametrize("kappa", [0.5, 0.3, 1.2])
    def test_bad_exponent(self, kappa):
        with pytest.raises(InputError):
            StepSchedule(1.0, kappa)

    def test_zero_based_rejected(self):
        with pytest.raises(InputError):
            StepSchedule()(0)

    def test_timescales(self):
        RiskConfig(1.0, b_schedule=StepSchedule(1.0, 1.0)).check_timescales(StepSchedule(1.0, 0.8))
        with pytest.raises(InputError):
            RiskConfig(1.0, b_schedule=StepSchedule(1.0, 1.0)).check_timescales(StepSchedule(1.0, 1.0))
        with pytest.raises(InputError):
            OptimizerConfig("risk-mcpg", risk=RiskConfig(1.0, b_schedule=StepSchedule(1.0, 0.7)))


class TestMcpg:
    def test_constant_evaluator(self):
        state = OptimizerState.initial([0.3], np.random.default_rng(0))
        nxt = mcpg_step(state, FunctionEvaluator(lambda th: 2.0), RAD, 0.1, StepSchedule(), UNIT)
        assert nxt.theta[0] == 0.3 and nxt.t == 2

    @pytest.mark.parametrize("seed", range(5))
    def test_converges_on_quadratic(self, seed):
        cfg = OptimizerConfig("mcpg-spsa")
        tr = run_optimizer(cfg, FunctionEvaluator(shifted), 500, seed=seed, theta0=[0.5])
        assert abs(tr.final_theta_bar[0] - 0.06) <= 0.02

    def test_corner_behaviour(self):
        box = Box.uniform(0, 1, 1)
        state = OptimizerState.initial([0.0], np.random.default_rng(0))
        # minimum inside: step leaves the corner
        inward = mcpg_step(state, FunctionEvaluator(lambda th: float((th[0] - 0.5) ** 2)), RAD, 0.1, StepSchedule(0.1), box)
        assert 0.0 < inward.theta[0] < 1.0
        outward = mcpg_step(state, FunctionEvaluator(lambda th: float(th[0])), RAD, 0.1, StepSchedule(), box)
        assert outward.theta[0] == 0.0

    def test_call_counts(self):
        for alg, calls in [("mcpg-spsa", 2), ("mcpg-sf", 2), ("mcpn-spsa", 4), ("mcpn-sf", 4), ("mcpn-woodbury", 4)]:
            from mfmcps.perturb import CountingEvaluator

            ev = CountingEvaluator(FunctionEvaluator(shifted))
            cfg = OptimizerConfig(alg, schedule=StepSchedule(0.5))
            run_optimizer(cfg, ev, 7, theta0=[0.5])
            assert ev.n_calls == 7 * calls == 7 * cfg.calls_per_iteration


class TestMcpn:
    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("alg", ["mcpn-spsa", "mcpn-sf"])
    def test_converges_on_quadratic(self, seed, alg):
        tr = run_optimizer(OptimizerConfig(alg), FunctionEvaluator(shifted), 500, seed=seed, theta0=[0.5])
        assert abs(tr.final_theta[0] - 0.06) <= 0.02

    def test_hessian_averaging(self):
        A = np.diag([2.0, 4.0])
        ev = FunctionEvaluator(lambda th: float(0.5 * th @ A @ th))
        box = Box.uniform(-1, 1, 2)
        state = OptimizerState.initial([0.5, -0.5], make_rng(0, 1), newton=True)
        for _ in range(10_000):
            state = mcpn_step(state, ev, RAD, 0.1, StepSchedule(), box)
        np.testing.assert_allclose(state.H, A, atol=0.1)
        assert np.array_equal(state.H, state.H.T)

    def test_constant_evaluator(self):
        ev = FunctionEvaluator(lambda th: 1.0)
        state = OptimizerState.initial([0.4], make_rng(0, 1), newton=True)
        for _ in range(50):
            state = mcpn_step(state, ev, RAD, 0.1, StepSchedule(), UNIT)
        assert state.theta[0] == 0.4
        assert state.H[0, 0] == 0.0
        np.testing.assert_allclose(state.M, [[10.0]])


class TestWoodbury:
    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            N = int(rng.integers(1, 6))
            B = rng.normal(size=(N, N))
            H = B @ B.T + N * np.eye(N)
            M = np.linalg.inv(H)
            a = float(rng.uniform(0.01, 0.9))
            dJ = float(rng.normal())
            U = 1.0 / (0.1 * rng.choice([-1.0, 1.0], N))
            V = 1.0 / (0.1 * rng.choice([-1.0, 1.0], N))
            try:
                got = woodbury_inverse_update(M, a, a, a * dJ, U, V)
            except DegenerateUpdateError:
                continue
            want = np.linalg.inv((1 - a) * H + a * dJ * np.outer(U, V))
            assert np.linalg.norm(got - want) <= 1e-8 * max(1.0, np.linalg.norm(want))

    def test_flat_evaluator(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        got = woodbury_inverse_update(M, 0.25, 0.25, 0.0, np.ones(2), np.ones(2))
        np.testing.assert_allclose(got, M / 0.75, rtol=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateUpdateError):
            woodbury_inverse_update(np.eye(1), 1.0, 1.0, 0.5, np.ones(1), np.ones(1))
        # 1 - b + C V M U = 0
        with pytest.raises(DegenerateUpdateError):
            woodbury_inverse_update(np.eye(1), 0.5, 0.5, -0.5, np.ones(1), np.ones(1))

    def test_scalar_matches_newton(self):
        ev = FunctionEvaluator(lambda th: float(th[0] ** 2))
        box = Box.uniform(-1, 1, 1)
        sched = StepSchedule(0.5)
        wb = OptimizerState.initial([0.5], make_rng(3, 1), newton=True, M0=np.eye(1) * 10.0)
        nt = OptimizerState.initial([0.5], make_rng(3, 1), newton=True)
        for _ in range(200):
            wb = woodbury_step(wb, ev, 0.1, sched, box)
            nt = mcpn_step(nt, ev, RAD, 0.1, sched, box)
            assert abs(wb.M[0, 0] - nt.M[0, 0]) <= 1e-10 * max(1.0, abs(nt.M[0, 0]))
            assert abs(wb.theta[0] - nt.theta[0]) <= 1e-9

    def test_first_harmonic_step_is_skipped(self):
        tr = run_optimizer(OptimizerConfig("mcpn-woodbury"), FunctionEvaluator(shifted), 20, theta0=[0.5])
        assert tr.failed[0] and not tr.failed[1:].any()
        assert tr.theta[0, 0] == 0.5


class TestRisk:
    @staticmethod
    def _ev(v=0.3):
        return FunctionEvaluator(shifted, variance=lambda th: v + float(th[0]))

    @pytest.mark.parametrize("plain,risky", [("mcpg-spsa", "risk-mcpg"), ("mcpn-spsa", "risk-mcpn")])
    def test_inactive_constraint_reduces(self, plain, risky):
        ev = self._ev()
        a = run_optimizer(OptimizerConfig(plain), ev, 200, seed=4)
        b = run_optimizer(OptimizerConfig(risky, risk=RiskConfig(1e6)), ev, 200, seed=4)
        assert a.theta.tobytes() == b.theta.tobytes()
        assert a.theta_bar.tobytes() == b.theta_bar.tobytes()
        assert np.all(b.lam == 0.0)

    def test_harmonic_multiplier(self):
        ev = FunctionEvaluator(shifted, variance=lambda th: 2.0)
        risk = RiskConfig(alpha=1.0, lambda_max=10.0, b_schedule=StepSchedule(0.1, 1.0))
        tr = run_optimizer(OptimizerConfig("risk-mcpg", risk=risk), ev, 300, theta0=[0.5])
        expected = np.minimum(0.1 * np.cumsum(1.0 / np.arange(1, 301)), 10.0)
        np.testing.assert_allclose(tr.lam, expected, rtol=1e-12)
        assert np.all(np.diff(tr.lam) >= 0)

    def test_cap(self):
        ev = FunctionEvaluator(shifted, variance=lambda th: 5.0)
        risk = RiskConfig(alpha=0.0, lambda_max=0.05, lambda0=0.05)
        tr = run_optimizer(OptimizerConfig("risk-mcpn", risk=risk), ev, 10, theta0=[0.5])
        assert np.all(tr.lam == 0.05)

    def test_needs_variance(self):
        from mfmcps.mfmc import UndefinedVarianceError

        cfg = OptimizerConfig("risk-mcpg", risk=RiskConfig(1.0))
        with pytest.raises(UndefinedVarianceError):
            run_optimizer(cfg, FunctionEvaluator(shifted), 10, theta0=[0.5])

    def test_lagrangian_hessian(self):
        A = np.diag([2.0, 1.0])
        B = np.array([[1.0, 0.5], [0.5, 2.0]])
        lam = 0.5
        ev = FunctionEvaluator(lambda th: float(0.5 * th @ A @ th), variance=lambda th: float(0.5 * th @ B @ th))
        from mfmcps.optim import _lagrangian, _newton_step

        box = Box.uniform(-1, 1, 2)
        state = OptimizerState.initial([0.3, -0.3], make_rng(1, 1), newton=True, lam=lam)
        for _ in range(10_000):
            state = _newton_step(state, ev, RAD, 0.1, StepSchedule(), box, 0.1, value=_lagrangian(lam))
        np.testing.assert_allclose(state.H, A + lam * B, atol=0.1)


class TestRunOptimizer:
    def test_zero_iterations(self):
        with pytest.raises(InputError):
            run_optimizer(OptimizerConfig(), FunctionEvaluator(shifted), 0)

    def test_unknown_algorithm(self):
        with pytest.raises(InputError):
            OptimizerConfig("newton-raphson")

    @pytest.mark.parametrize("alg", ["mcpg-spsa", "mcpg-sf", "mcpn-spsa", "mcpn-sf", "mcpn-woodbury"])
    def test_polyak_and_feasibility(self, alg):
        f = lambda th: float(np.sum((th - 0.3) ** 2) + 0.1 * np.sin(20 * th[0]))
        cfg = OptimizerConfig(alg, box=Box.uniform(0, 1, 2))
        tr = run_optimizer(cfg, FunctionEvaluator(f), 300, seed=2)
        assert len(tr) == 300
        assert np.all((tr.theta >= 0) & (tr.theta <= 1))
        full = np.vstack([tr.theta0, tr.theta])
        running = np.cumsum(full, axis=0) / np.arange(1, full.shape[0] + 1)[:, None]
        np.testing.assert_allclose(tr.theta_bar, running[1:], atol=1e-12, rtol=0)
        if cfg.newton or alg == "mcpn-woodbury":
            assert np.all(tr.h_min_eig >= 0.1 - 1e-9)

    def test_replay(self):
        cfg = OptimizerConfig("mcpn-sf")
        a = run_optimizer(cfg, FunctionEvaluator(shifted), 100, seed=9)
        b = run_optimizer(cfg, FunctionEvaluator(shifted), 100, seed=9)
        assert a.theta.tobytes() == b.theta.tobytes() and a.theta0.tobytes() == b.theta0.tobytes()

    def test_error_budget(self):
        def boom(th):
            raise RuntimeError("evaluator failure")

        with pytest.raises(ErrorBudgetExceeded):
            run_optimizer(OptimizerConfig(error_budget=3), FunctionEvaluator(boom), 10, theta0=[0.5])
        cfg = OptimizerConfig(error_budget=10)
        tr = run_optimizer(cfg, FunctionEvaluator(boom), 5, theta0=[0.5])
        assert tr.failed.all() and np.all(tr.theta == 0.5)
        np.testing.assert_array_equal(tr.t, [1, 2, 3, 4, 5])

    def test_trace_csv(self, tmp_path):
        tr = run_optimizer(OptimizerConfig(box=Box.uniform(0, 1, 2)), FunctionEvaluator(lambda th: float(th.sum())), 3)
        tr.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].startswith("# algorithm=mcpg-spsa,seed=0,theta0=")
        assert lines[1] == "t,theta_0,theta_1,theta_bar_0,theta_bar_1,j_plus,j_minus,lambda,h_min_eig"
        assert len(lines) == 5
