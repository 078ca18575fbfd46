import numpy as np
import pytest

from ppide import AtomicLaw, CadlagPath, Characteristics, FiniteLevy, InputError, UniformLaw, simulate
from ppide.errors import AssumptionError, SimulationError
from ppide.simulate import MappedJumps, grid_skeleton, hitting_skeleton, restart_check


def var_se(x):
    n = x.size
    c = x - x.mean()
    return np.sqrt(max(np.mean(c**4) - np.mean(c**2) ** 2, 0.0) / n)


def test_deterministic_ode_case():
    char = Characteristics.constant(b=0.7)
    prefix = CadlagPath.step([0.0, 0.1], [[0.0], [2.0]], 1.0)
    ens = simulate(char, 0.25, prefix, 5, 1 / 16, seed=0)
    expected = 2.0 + 0.7 * (ens.times - 0.25)
    np.testing.assert_allclose(ens.X[:, :, 0], np.broadcast_to(expected, (5, len(ens.times))), atol=1e-12)


def test_prefix_is_kept():
    prefix = CadlagPath.step([0.0, 0.1], [[0.0], [2.0]], 1.0)
    ens = simulate(Characteristics.constant(sigma=0.5), 0.25, prefix, 3, 1 / 8, seed=1)
    hist = ens.history(0)
    assert hist.values[:, 0, 0].tolist() == [0.0] * 3
    assert np.all(ens.X[:, 0, 0] == 2.0)


@pytest.mark.parametrize("law", [AtomicLaw([[-0.4], [0.5]], [0.3, 0.7]), UniformLaw(0.3, 0.6, symmetric=True)])
def test_levy_moments(law):
    char = Characteristics.constant(b=0.2, sigma=0.4, jumps=FiniteLevy(2.0, law))
    ens = simulate(char, 0.0, CadlagPath.constant([1.0], 1.0), 20000, 1 / 64, seed=3)
    XT = ens.X[:, -1, 0]
    m, se = XT.mean(), XT.std(ddof=1) / np.sqrt(XT.size)
    assert abs(m - (1.0 + 0.2)) <= 3 * se
    var = 0.16 + char.levy_second_moment()
    assert abs(XT.var(ddof=1) - var) <= 3 * var_se(XT)


def test_compensated_martingale_at_every_grid_time(jump_char):
    ens = simulate(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 20000, 1 / 16, seed=4)
    centered = ens.X[:, :, 0] - 0.1 * (ens.times - ens.times[0])
    m = centered.mean(axis=0)
    se = centered.std(axis=0, ddof=1) / np.sqrt(centered.shape[0]) + 1e-300
    assert np.all(np.abs(m[1:]) <= 3 * se[1:] + 1e-12)


def test_jump_sizes_respect_bounds():
    law = UniformLaw(0.3, 0.5, symmetric=True)
    char = Characteristics.constant(sigma=0.2, jumps=FiniteLevy(5.0, law))
    ens = simulate(char, 0.0, CadlagPath.constant([0.0], 1.0), 2000, 1 / 32, seed=5)
    sizes = np.abs(ens.jump_size[:, 0])
    assert sizes.size > 1000
    assert sizes.min() >= 0.3 and sizes.max() <= 0.5


def test_jump_counts_poisson():
    char = Characteristics.constant(jumps=FiniteLevy(1.5, AtomicLaw([[0.4]], [1.0])))
    ens = simulate(char, 0.0, CadlagPath.constant([0.0], 1.0), 20000, 1 / 8, seed=6)
    counts = ens.count_cum[:, -1]
    assert abs(counts.mean() - 1.5) <= 3 * np.sqrt(1.5 / counts.size)


def test_out_of_bound_jumps_rejected():
    with pytest.raises(AssumptionError, match="jump-size-bounds"):
        Characteristics.constant(jumps=FiniteLevy(1.0, AtomicLaw([[0.1], [2.0]], [0.5, 0.5])), bound=1.0)


def test_unbounded_drift_rejected():
    with pytest.raises(AssumptionError, match="bounded-coefficients"):
        Characteristics.constant(b=3.0, bound=1.0)


def test_non_finite_coefficient_reports_time_and_path():
    def drift(t, hist):
        out = np.zeros((hist.n_paths, 1))
        if t >= 0.5:
            out[2] = np.nan
        return out

    def sigma(t, hist):
        return np.full((hist.n_paths, 1, 1), 0.1)

    char = Characteristics(1, drift, sigma)
    with pytest.raises(SimulationError) as err:
        simulate(char, 0.0, CadlagPath.constant([0.0], 1.0), 4, 1 / 4, seed=0)
    assert err.value.t == pytest.approx(0.5) and err.value.path_index == 2


def test_step_must_divide_interval(jump_char):
    with pytest.raises(InputError):
        simulate(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 4, 0.3, seed=0)


def test_thread_count_does_not_change_output(jump_char):
    args = (jump_char, 0.1, CadlagPath.constant([0.0], 1.0), 3001, 1 / 40, 9)
    a, b = simulate(*args, workers=1), simulate(*args, workers=4)
    np.testing.assert_array_equal(a.full, b.full)
    np.testing.assert_array_equal(a.jump_time, b.jump_time)


def test_state_dependent_jumps():
    def delta(t, hist, mark):
        x = hist.current[:, 0]
        return np.where(x > 0, -mark[0], mark[0])[:, None]

    char = Characteristics(1, lambda t, h: np.zeros((h.n_paths, 1)), lambda t, h: np.full((h.n_paths, 1, 1), 0.2),
                           MappedJumps(delta, [0.5], [1.0]), bound=1.0)
    ens = simulate(char, 0.0, CadlagPath.constant([0.0], 1.0), 500, 1 / 32, seed=2)
    assert np.all(np.abs(np.abs(ens.jump_size[:, 0]) - 0.5) < 1e-12)


class TestHittingSkeleton:
    def test_constant_path(self):
        sk = hitting_skeleton(CadlagPath.constant([0.3], 1.0), 0.2, 0.1)
        assert [t for t, _ in sk] == [0.2, 1.0]

    def test_single_jump(self):
        p = CadlagPath.indicator(0.6, 1.0, height=0.5)
        sk = hitting_skeleton(p, 0.0, 0.3)
        assert sk[1][0] == pytest.approx(0.6) and sk[1][1][0] == 0.5

    def test_matches_dense_first_passage(self, jump_char):
        ens = simulate(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 5, 1 / 64, seed=11)
        eps = 0.15
        for i in range(5):
            p = ens.path(i)
            sk = hitting_skeleton(p, 0.0, eps)
            grid = np.union1d(np.linspace(0, 1, 200001), p.times)
            vals = p.value(grid)[:, 0]
            base, hits, k = vals[0], [], 0
            while True:
                idx = np.nonzero((np.abs(vals - base) >= eps - 1e-12) & (grid > (hits[-1] if hits else 0.0)))[0]
                idx = idx[grid[idx] < 1.0 - 1e-12]
                if not idx.size:
                    break
                hits.append(grid[idx[0]])
                base = vals[idx[0]]
            got = [t for t, _ in sk[1:-1]]
            assert len(got) == len(hits)
            np.testing.assert_allclose(got, hits, atol=2e-5)

    def test_shift_property(self, jump_char):
        ens = simulate(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 5, 1 / 64, seed=12)
        for i in range(5):
            p = ens.path(i)
            sk = hitting_skeleton(p, 0.0, 0.2)
            if len(sk) < 3:
                continue
            tail = hitting_skeleton(p, sk[1][0], 0.2)
            assert len(tail) == len(sk) - 1
            for (t1, x1), (t2, x2) in zip(sk[1:], tail):
                assert t1 == pytest.approx(t2, abs=1e-12)
                np.testing.assert_allclose(x1, x2, atol=1e-12)

    def test_grid_skeleton_freezes_levels(self):
        X = np.array([[[0.0], [0.05], [0.25], [0.3], [0.0]]])
        sk = grid_skeleton(X, 0.2)
        np.testing.assert_allclose(sk.frozen[0, :, 0], [0.0, 0.0, 0.25, 0.25, 0.0])


class TestRestart:
    def test_constant_functional(self, jump_char):
        out = restart_check(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 0.5, lambda h: np.full(h.n_paths, 2.0),
                            2000, seed=1, h=1 / 16)
        assert out["lhs"] == 2.0 and out["rhs"] == 2.0

    def test_linear_functional(self, jump_char):
        out = restart_check(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 0.5, lambda h: h.current[:, 0],
                            20000, seed=2, h=1 / 16)
        assert abs(out["lhs"] - 0.1) <= 3 * out["lhs_se"]
        assert abs(out["rhs"] - 0.1) <= 3 * out["rhs_se"]

    def test_call_payoff_tower_property(self, jump_char):
        out = restart_check(jump_char, 0.0, CadlagPath.constant([0.0], 1.0), 0.5,
                            lambda h: np.maximum(h.current[:, 0] - 0.1, 0.0), 20000, seed=3, h=1 / 32)
        assert abs(out["lhs"] - out["rhs"]) <= 3 * out["se"]
