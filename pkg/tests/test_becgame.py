import numpy as np
import pytest

from pvglab import becgame
from pvglab.becgame import QTriple, ReducedBEC
from pvglab.errors import ConfigError, UsageError
from pvglab.rng import stream


class TestOptimalQ:
    def test_balanced_erasure_token(self):
        for lam in (0.01, 0.1, 1.0):
            q = becgame.optimal_q(ReducedBEC(0.0, 0.0, lam))
            assert q.q2 == pytest.approx(0.5, abs=1e-15)

    def test_unsmoothed_limit(self):
        q = becgame.optimal_q(ReducedBEC(0.3, 0.4, 0.0))
        assert q.q1 == 1.0
        assert q.q0 == 0.0

    def test_substituted_point(self):
        q = becgame.optimal_q(ReducedBEC(1.0, 0.0, 0.1))
        assert q.q0 == pytest.approx(1 / 12, abs=1e-15)
        assert q.q1 == pytest.approx(11 / 12, abs=1e-15)
        assert q.q2 == pytest.approx(1 / 12, abs=1e-15)

    def test_degenerate_channel_rejected(self):
        with pytest.raises(ConfigError):
            becgame.optimal_q(ReducedBEC(1.0, 1.0, 0.1))

    def test_matches_grid_brute_force(self):
        rng = stream(21, 0)
        for _ in range(6):
            model = ReducedBEC(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), 0.1)
            exact = becgame.optimal_q(model)
            grid = becgame.verifier_loss_on_grid(model, resolution=1e-3)
            for e, g in zip(exact.as_tuple(), grid.as_tuple()):
                assert abs(e - g) <= 1e-3


class TestObjective:
    def test_uniform_half_q_gives_two_ln_two(self):
        model = ReducedBEC(0.0, 0.0, 0.1)
        val = becgame.prover_objective(model, QTriple(0.5, 0.5, 0.5))
        assert val == pytest.approx(2 * np.log(2), abs=1e-14)

    def test_substituted_point(self):
        model = ReducedBEC(1.0, 0.0, 0.1)
        val = becgame.prover_objective(model)
        assert val == pytest.approx(-np.log(11 / 12) - np.log(1 / 12), abs=1e-12)

    def test_log_zero_clamped_and_flagged(self):
        model = ReducedBEC(0.5, 0.5, 0.1)
        val, clamped = becgame.objective_clamped(model, QTriple(0.0, 0.9, 0.5))
        assert clamped
        assert np.isfinite(val)
        assert val > -0.5 * np.log(becgame.LOG_FLOOR)  # dominated by the floor term


class TestGrads:
    def test_simultaneous_substituted_point(self):
        da, db = becgame.sim_grads(ReducedBEC(0.5, 0.5, 0.1))
        assert da == pytest.approx(-np.log(11 / 6), rel=1e-12)
        assert db == pytest.approx(np.log(6), rel=1e-12)
        assert da < 0 < db

    def test_db_positive_whenever_a_below_one(self):
        rng = stream(22, 0)
        for _ in range(50):
            model = ReducedBEC(rng.uniform(0, 0.999), rng.uniform(0, 1), 0.1)
            _, db = becgame.sim_grads(model)
            assert db > 0

    def test_db_at_b_one_closed_form(self):
        lam = 0.1
        for a in (0.1, 0.5, 0.9):
            _, db = becgame.sim_grads(ReducedBEC(a, 1.0, lam))
            assert db == pytest.approx(np.log((1 + lam) / lam), rel=1e-12)

    def test_simultaneous_matches_fd_with_frozen_q(self):
        # partial derivative: q held at the current optimum while (a, b) move
        rng = stream(23, 0)
        h = 1e-7
        for _ in range(10):
            a, b = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)
            model = ReducedBEC(a, b, 0.1)
            q = becgame.optimal_q(model)
            da, db = becgame.sim_grads(model)
            fd_a = (
                becgame.prover_objective(ReducedBEC(a + h, b, 0.1), q)
                - becgame.prover_objective(ReducedBEC(a - h, b, 0.1), q)
            ) / (2 * h)
            fd_b = (
                becgame.prover_objective(ReducedBEC(a, b + h, 0.1), q)
                - becgame.prover_objective(ReducedBEC(a, b - h, 0.1), q)
            ) / (2 * h)
            assert abs(da - fd_a) / max(abs(fd_a), 1e-9) <= 1e-6
            assert abs(db - fd_b) / max(abs(fd_b), 1e-9) <= 1e-6

    def test_stackelberg_matches_fd_with_reoptimized_q(self):
        # total derivative: the verifier response is re-solved per evaluation
        rng = stream(24, 0)
        h = 1e-7
        for _ in range(10):
            a, b = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)
            da, db = becgame.stackelberg_grads(ReducedBEC(a, b, 0.1))
            fd_a = (
                becgame.prover_objective(ReducedBEC(a + h, b, 0.1))
                - becgame.prover_objective(ReducedBEC(a - h, b, 0.1))
            ) / (2 * h)
            fd_b = (
                becgame.prover_objective(ReducedBEC(a, b + h, 0.1))
                - becgame.prover_objective(ReducedBEC(a, b - h, 0.1))
            ) / (2 * h)
            assert abs(da - fd_a) / max(abs(fd_a), 1e-9) <= 1e-6
            assert abs(db - fd_b) / max(abs(fd_b), 1e-9) <= 1e-6

    def test_stackelberg_positive_on_interior(self):
        rng = stream(25, 0)
        for _ in range(50):
            model = ReducedBEC(rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99), 0.1)
            da, db = becgame.stackelberg_grads(model)
            assert da > 0 and db > 0

    def test_log_one_plus_x_below_x(self):
        rng = stream(26, 0)
        x = rng.uniform(1e-6, 10, size=100)
        assert np.all(-np.log1p(x) + x > 0)

    def test_lam_zero_rejected(self):
        with pytest.raises(UsageError):
            becgame.sim_grads(ReducedBEC(0.5, 0.5, 0.0))


class TestSimulate:
    def test_zero_steps_returns_init(self):
        res = becgame.simulate("simultaneous", ReducedBEC(0.3, 0.7, 0.1), steps=0)
        assert res.final.a == 0.3 and res.final.b == 0.7
        assert not res.converged

    def test_simultaneous_reaches_informative_fixed_point(self):
        lam = 0.1
        res = becgame.simulate("simultaneous", ReducedBEC(0.2, 0.8, lam))
        assert res.converged
        assert res.final.a >= 1 - 1e-4
        assert res.final_q.q1 == pytest.approx((1 + lam) / (1 + 2 * lam), abs=1e-6)
        assert res.final_q.q0 == pytest.approx(lam / (1 + 2 * lam), abs=1e-6)
        assert res.final_q.q2 == pytest.approx(lam / (1 + 2 * lam), abs=1e-6)

    def test_simultaneous_monotone_until_saturation(self):
        res = becgame.simulate("simultaneous", ReducedBEC(0.4, 0.6, 0.1))
        rows = res.trajectory
        for prev, cur in zip(rows, rows[1:]):
            assert cur[1] >= prev[1] - 1e-12  # a non-decreasing
            assert cur[2] <= prev[2] + 1e-12  # b non-increasing

    def test_fixed_point_is_stationary(self):
        first = becgame.simulate("simultaneous", ReducedBEC(0.5, 0.5, 0.1))
        again = becgame.simulate(
            "simultaneous", first.final, steps=1, tol=1e-6
        )
        assert abs(again.final.a - first.final.a) <= 1e-6
        assert abs(again.final.b - first.final.b) <= 1e-6

    def test_prover_leading_collapses_to_erasure_only(self):
        rng = stream(27, 0)
        for _ in range(5):
            init = ReducedBEC(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), 0.1)
            res = becgame.simulate("prover_leading", init)
            assert res.final.a <= 1e-4 and res.final.b <= 1e-4

    def test_two_timescale_tracks_simultaneous_limit(self):
        res = becgame.simulate(
            "two_timescale",
            ReducedBEC(0.3, 0.7, 0.1),
            lr=0.02,
            verifier_ratio=50,
            verifier_lr=2.0,
            steps=20_000,
        )
        assert res.final.a >= 0.99

    def test_csv_roundtrip(self, tmp_path):
        res = becgame.simulate("simultaneous", ReducedBEC(0.5, 0.5, 0.1), steps=10)
        path = tmp_path / "traj.csv"
        res.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,a,b,q0,q1,q2,objective"
        assert len(lines) == len(res.trajectory) + 1
