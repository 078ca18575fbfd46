import numpy as np
import pytest

from ppide import AtomicLaw, CadlagPath, Characteristics, FiniteLevy, InputError, simulate
from ppide.bsde import (Basis, ControlPair, IbpSpec, gamma_expectation, ibp_check, nonlinear_expectation, solve_bsde,
                        solve_rbsde, u0)
from ppide.errors import SolverError
from ppide.operators import Driver

from conftest import terminal

ZERO = CadlagPath.constant([0.0], 1.0)


def const(c):
    return lambda h: np.full(h.n_paths, float(c))


class TestSolveBsde:
    def test_constants(self, jump_char):
        sol = solve_bsde(simulate(jump_char, 0.0, ZERO, 500, 1 / 16, 0), const(2.5), Driver.zero())
        np.testing.assert_allclose(sol.Y, 2.5, atol=1e-12)
        np.testing.assert_allclose(sol.Z, 0.0, atol=1e-12)
        np.testing.assert_allclose(sol.p, 0.0, atol=1e-12)

    def test_pure_drift(self, jump_char):
        kappa = 0.7
        drv = Driver(lambda t, h, y, z, p: np.full_like(y, kappa), lipschitz=0.0)
        sol = solve_bsde(simulate(jump_char, 0.0, ZERO, 500, 1 / 16, 0), const(0.0), drv)
        np.testing.assert_allclose(sol.Y, np.broadcast_to(kappa * (1.0 - sol.times), sol.Y.shape), atol=1e-12)

    def test_linear_driver_closed_form(self, jump_char):
        alpha, h = 0.8, 1 / 64
        drv = Driver(lambda t, hh, y, z, p: alpha * y, lipschitz=alpha)
        sol = solve_bsde(simulate(jump_char, 0.0, ZERO, 2000, h, 1), const(1.0), drv)
        exact = np.exp(alpha * (1.0 - sol.times))
        assert np.max(np.abs(sol.Y.mean(axis=0) - exact)) <= alpha**2 * np.exp(alpha) * h + 3 * sol.se

    def test_terminal_consistency(self, jump_char):
        xi = lambda h: np.sin(h.current[:, 0]) + h.running_max()
        ens = simulate(jump_char, 0.0, ZERO, 1000, 1 / 16, 2)
        sol = solve_bsde(ens, xi, Driver(lambda t, h, y, z, p: 0.1 * y + 0.2 * p))
        np.testing.assert_array_equal(sol.Y[:, -1], xi(ens.history()))

    def test_rank_deficiency_names_step(self):
        char = Characteristics.constant(sigma=0.3)
        ens = simulate(char, 0.0, ZERO, 1000, 1 / 16, 3, noise="rademacher")
        with pytest.raises(SolverError) as err:
            solve_bsde(ens, terminal, Driver(lambda t, h, y, z, p: 0.1 * y), Basis(degree=3))
        assert err.value.step is not None

    def test_reduce_policy_recovers(self):
        char = Characteristics.constant(sigma=0.3)
        ens = simulate(char, 0.0, ZERO, 1000, 1 / 16, 3, noise="rademacher")
        sol = solve_bsde(ens, terminal, Driver(lambda t, h, y, z, p: 0.1 * y), Basis(degree=3, rank_policy="reduce"))
        assert np.isfinite(sol.value)

    def test_brownian_loading(self):
        char = Characteristics.constant(b=0.0, sigma=0.5)
        sol = solve_bsde(simulate(char, 0.0, ZERO, 4000, 1 / 32, 4), terminal, Driver.zero())
        assert abs(sol.Z.mean() - 1.0) < 0.02

    def test_jump_aggregate(self):
        char = Characteristics.constant(jumps=FiniteLevy(2.0, AtomicLaw([[0.4]], [1.0])), sigma=0.2)
        sol = solve_bsde(simulate(char, 0.0, ZERO, 4000, 1 / 32, 5), terminal, Driver.zero())
        assert abs(sol.p.mean() - 2.0 * 0.4 * 0.4) < 0.02


class TestU0:
    def test_linear_reduction(self, jump_char):
        xi = lambda h: np.cos(h.current[:, 0])
        v, se = u0(jump_char, Driver.zero(), xi, 0.25, ZERO, 5000, 1 / 16, 7)
        direct = xi(simulate(jump_char, 0.25, ZERO, 5000, 1 / 16, 7).history())
        assert v == pytest.approx(direct.mean(), abs=1e-12)

    def test_comparison(self, jump_char):
        drv = Driver(lambda t, h, y, z, p: 0.2 * np.abs(z[:, 0]) + 0.3 * p - 0.1 * y)
        lo = u0(jump_char, drv, lambda h: np.minimum(h.current[:, 0], 0.2), 0.0, ZERO, 5000, 1 / 32, 8)
        hi = u0(jump_char, drv, lambda h: np.minimum(h.current[:, 0], 0.2) + 0.05 * h.running_max(), 0.0, ZERO,
                5000, 1 / 32, 8)
        assert lo[0] <= hi[0] + 3 * hi[1]


class TestNonlinearExpectation:
    def test_no_penalty_is_plain_mean(self, jump_char):
        xi = lambda h: np.sin(h.current[:, 0])
        v, _ = nonlinear_expectation(jump_char, 0.0, 0.0, ZERO, None, xi, N=4000, h=1 / 16, seed=1)
        direct = xi(simulate(jump_char, 0.0, ZERO, 4000, 1 / 16, 1).history()).mean()
        assert v == pytest.approx(direct, abs=1e-10)

    def test_linear_closed_form(self):
        b, sigma, L, s = 0.2, 0.4, 0.5, 0.25
        char = Characteristics.constant(b=b, sigma=sigma)
        omega = CadlagPath.constant([0.3], 1.0)
        v, se = nonlinear_expectation(char, L, s, omega, None, terminal, N=4000, h=1 / 64, seed=2)
        assert abs(v - (0.3 + (b + L * sigma) * (1 - s))) <= max(0.01, 3 * se)

    def test_monotone_in_penalty(self, jump_char):
        xi = lambda h: np.maximum(h.current[:, 0], 0.0)
        vals = [nonlinear_expectation(jump_char, L, 0.0, ZERO, None, xi, N=4000, h=1 / 32, seed=3)[0]
                for L in (0.0, 0.25, 0.5, 1.0)]
        assert np.all(np.diff(vals) >= -1e-12)

    def test_lower_below_upper(self, jump_char):
        kw = dict(N=4000, h=1 / 32, seed=4)
        up = nonlinear_expectation(jump_char, 0.5, 0.0, ZERO, None, terminal, True, **kw)[0]
        lo = nonlinear_expectation(jump_char, 0.5, 0.0, ZERO, None, terminal, False, **kw)[0]
        mid = nonlinear_expectation(jump_char, 0.0, 0.0, ZERO, None, terminal, True, **kw)[0]
        assert lo <= mid <= up

    def test_penalty_switched_off_after_stop(self):
        char = Characteristics.constant(sigma=0.4)
        stop_now = lambda ens: np.zeros(ens.n_paths, dtype=int)
        v, _ = nonlinear_expectation(char, 1.0, 0.0, ZERO, stop_now, terminal, N=500, h=1 / 16, seed=5)
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_non_atomic_kernel_rejected(self):
        from ppide import UniformLaw
        char = Characteristics.constant(sigma=0.2, jumps=FiniteLevy(1.0, UniformLaw(0.3, 0.5)))
        with pytest.raises(InputError):
            nonlinear_expectation(char, 1.0, 0.0, ZERO, None, terminal, N=100, h=1 / 8, seed=0)


class TestGammaExpectation:
    def test_null_pair(self, jump_char):
        xi = lambda h: np.cos(h.current[:, 0])
        v, _ = gamma_expectation(jump_char, ControlPair.constant(0.0, 0.0, 1.0), 0.0, ZERO, xi, 4000, 1 / 16, 1)
        assert v == pytest.approx(xi(simulate(jump_char, 0.0, ZERO, 4000, 1 / 16, 1).history()).mean(), abs=1e-12)

    def test_normalization(self, jump_char):
        pair = ControlPair.constant(1.0, 0.3, 1.0)
        v, se = gamma_expectation(jump_char, pair, 0.0, ZERO, lambda h: np.ones(h.n_paths), 10000, 1 / 64, 2)
        assert abs(v - 1.0) <= 3 * se

    def test_tilted_intensity(self):
        lam, z0, w0, s = 1.5, 0.4, 0.3, 0.25
        char = Characteristics.constant(jumps=FiniteLevy(lam, AtomicLaw([[z0]], [1.0])))
        pair = ControlPair.constant(0.0, w0, 1.0)
        count = lambda h: h.extras["jump_count"].astype(float)
        v, se = gamma_expectation(char, pair, s, ZERO, count, 20000, 1 / 256, 3)
        assert abs(v - lam * (1 + w0) * (1 - s)) <= 3 * se + 0.01

    def test_inadmissible_pair_rejected(self, jump_char):
        with pytest.raises(InputError):
            gamma_expectation(jump_char, ControlPair.constant(10.0, 0.0, 1.0), 0.0, ZERO, terminal, 100, 1 / 8, 0)
        with pytest.raises(InputError):
            gamma_expectation(jump_char, ControlPair.constant(0.0, 0.9, 1.0), 0.0, ZERO, terminal, 100, 1 / 8, 0)


class TestRbsde:
    def test_inactive_barrier(self, jump_char):
        ens = simulate(jump_char, 0.0, ZERO, 2000, 1 / 16, 1)
        xi = lambda h: np.sin(h.current[:, 0])
        ref = solve_bsde(ens, xi, Driver.zero())
        low = lambda h: np.where(h.t >= 1.0 - 1e-12, xi(h), -1e6)
        sol = solve_rbsde(ens, low)
        np.testing.assert_allclose(sol.Y[:, 0], ref.Y[:, 0], atol=1e-10)
        assert np.all(sol.dK == 0.0)

    def test_skorohod_conditions(self, jump_char):
        ens = simulate(jump_char, 0.0, ZERO, 4000, 1 / 32, 2)
        sol = solve_rbsde(ens, lambda h: np.maximum(0.1 - h.current[:, 0], 0.0), L=0.3)
        assert np.all(sol.Y >= sol.barrier - 1e-12)
        assert sol.diagnostics["flat_off_violation"] <= 0.01 * sol.diagnostics["compensator_mass"] + 1e-15

    def test_dominates_fixed_stopping_rules(self, jump_char):
        ens = simulate(jump_char, 0.0, ZERO, 8000, 1 / 32, 3)
        R = lambda h: np.maximum(0.1 - h.current[:, 0], 0.0)
        sol = solve_rbsde(ens, R)
        for k in (0, 8, 16, 24, 32):
            fixed = lambda e, k=k: np.full(e.n_paths, k)
            v, se = nonlinear_expectation(jump_char, 0.0, 0.0, ZERO, fixed, R, ensemble=ens)
            assert sol.value >= v - 3 * se
        at_tau, _ = nonlinear_expectation(jump_char, 0.0, 0.0, ZERO, lambda e: sol.tau, R, ensemble=ens)
        assert at_tau == pytest.approx(sol.value, abs=1e-12)
        assert sol.diagnostics["in_sample_value"] >= sol.value - 3 * sol.se


class TestIbp:
    def test_zero_integrands(self, jump_char):
        out = ibp_check(jump_char, IbpSpec(S1=1.5, S2=-2.0), 0.0, ZERO, 500, 1 / 16, 0)
        assert out["lhs"] == pytest.approx(-3.0) and out["rhs"] == pytest.approx(-3.0)

    def test_deterministic_drift(self, jump_char):
        out = ibp_check(jump_char, IbpSpec(beta1=1.0, S1=0.5, S2=2.0), 0.25, ZERO, 500, 1 / 16, 0)
        assert out["lhs"] == pytest.approx(2.0 * (0.5 + 0.75))
        assert out["rhs"] == pytest.approx(out["lhs"])

    def test_ito_isometry(self):
        char = Characteristics.constant(sigma=0.5)
        out = ibp_check(char, IbpSpec(H1=1.0, H2=1.0), 0.0, ZERO, 10000, 1 / 64, 1)
        assert out["rhs"] == pytest.approx(0.25)
        assert abs(out["lhs"] - out["rhs"]) <= 3 * out["se"]

    def test_with_jumps(self, jump_char):
        out = ibp_check(jump_char, IbpSpec(H1=1.0, H2=1.0, W1=0.5, W2=0.3, S1=1.0, S2=2.0), 0.0, ZERO, 10000,
                        1 / 64, 2)
        assert abs(out["lhs"] - out["rhs"]) <= 3 * out["se"] + 1 / 64
