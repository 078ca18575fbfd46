import threading

import numpy as np
import pytest

from ppide import AssumptionError, CadlagPath, Characteristics, EvaluationError, TimePoint
from ppide.catalog import driver as make_driver
from ppide.errors import ApproximationError, InputError, SolverError
from ppide.operators import Driver
from ppide.pathfrozen import (
    CylinderGrid,
    FrozenSkeleton,
    PathFrozen,
    PsiConfig,
    ThetaConfig,
    bernstein_fit,
    delta,
    delta_tail,
    frozen_data,
    grid_error_estimate,
    h_eps,
    partial_comparison_check,
    solve_frozen_pide,
    theta,
)
from ppide.simulate import simulate

from conftest import terminal

EPS = 0.2
FAST = PsiConfig(ThetaConfig(N=400, h=1 / 16), degrees=(2, 4), n_t=16)


def running_max(h):
    return h.running_max(0)


@pytest.fixture
def anchor():
    return TimePoint(0.5, CadlagPath.constant([0.0], 1.0))


class TestDeltas:
    def test_geometric_sequence(self):
        assert delta(1, EPS) == pytest.approx(EPS / 8)
        assert sum(delta(j, EPS) for j in range(3, 60)) == pytest.approx(delta_tail(3, EPS))

    def test_tail_from_first_level(self):
        assert delta_tail(1, EPS) == pytest.approx(EPS / 4)


class TestSkeleton:
    def test_first_time_is_anchor(self, anchor):
        with pytest.raises(InputError):
            FrozenSkeleton(anchor, ((0.6, [0.0]),))

    def test_times_nondecreasing(self, anchor):
        with pytest.raises(InputError):
            FrozenSkeleton(anchor, ((0.5, [0.0]), (0.7, [0.2]), (0.6, [0.4])))

    def test_key_rounds(self, anchor):
        a = FrozenSkeleton.start(anchor).extend(0.7, [0.2])
        b = FrozenSkeleton.start(anchor).extend(0.7 + 1e-13, [0.2 - 1e-13])
        assert a.key() == b.key()

    def test_frozen_path_glues_anchor(self):
        w = CadlagPath.step([0.0, 0.25], [[0.0], [1.0]], 1.0)
        skel = FrozenSkeleton.start(TimePoint(0.5, w)).extend(0.7, [1.2])
        p = skel.path(((0.9, [1.4]),), [1.5])
        assert p.value(0.1)[0] == 0.0 and p.value(0.6)[0] == 1.0
        assert p.value(0.8)[0] == pytest.approx(1.2) and p.value(0.95)[0] == pytest.approx(1.4)
        assert p.value(1.0)[0] == pytest.approx(1.5)


class TestFrozenData:
    def test_terminal_g(self, anchor):
        skel = FrozenSkeleton.start(anchor).extend(0.7, [0.2])
        g, f = frozen_data(skel, [], [0.35], terminal)
        assert g == pytest.approx(0.35) and f is None

    def test_running_max_sees_skeleton(self, anchor):
        skel = FrozenSkeleton.start(anchor).extend(0.6, [0.4]).extend(0.8, [0.2])
        g, _ = frozen_data(skel, [(0.9, [0.0])], [0.1], running_max)
        assert g == pytest.approx(0.4)

    def test_driver_time_clamped_to_anchor(self, anchor):
        seen = []
        drv = Driver(lambda t, h, y, z, p: seen.append(t) or np.zeros_like(y), lipschitz=0.0)
        _, f = frozen_data(FrozenSkeleton.start(anchor), [], [0.0], terminal, drv)
        f(0.1, [0.0], [[0.0]], [0.0])
        f(1.5, [0.0], [[0.0]], [0.0])
        assert seen == [0.5, 1.0]


class TestTheta:
    def test_closed_form_linear_terminal(self, jump_char, anchor):
        skel = FrozenSkeleton.start(anchor)
        v, se = theta(skel, 0.5, [0.0], jump_char, Driver.zero(), terminal, EPS, N=4000, h=1 / 32)
        assert abs(v - 0.1 * 0.5) <= 3 * se + 0.01

    def test_at_horizon_is_xi(self, jump_char, anchor):
        skel = FrozenSkeleton.start(anchor)
        assert theta(skel, 1.0, [0.3], jump_char, Driver.zero(), terminal, EPS) == (pytest.approx(0.3), 0.0)

    def test_rejects_time_before_last_level(self, jump_char, anchor):
        skel = FrozenSkeleton.start(anchor).extend(0.7, [0.2])
        with pytest.raises(InputError):
            theta(skel, 0.6, [0.2], jump_char, Driver.zero(), terminal, EPS)

    def test_dpp_identity_outside_ball(self, jump_char, anchor):
        skel = FrozenSkeleton.start(anchor)
        drv = make_driver({"kind": "semilinear", "a_y": -0.1, "a_z": 0.2, "a_p": 0.2}, jump_char)
        for t, x in [(0.6, 0.25), (0.75, -0.3)]:
            a = theta(skel, t, [x], jump_char, drv, running_max, EPS, N=800, h=1 / 16, seed=3)
            b = h_eps(skel, t, [x], jump_char, drv, running_max, EPS, N=800, h=1 / 16, seed=3)
            assert abs(a[0] - b[0]) <= 3 * np.hypot(a[1], b[1])

    def test_h_eps_clamps_time(self, jump_char, anchor):
        skel = FrozenSkeleton.start(anchor).extend(0.7, [0.2])
        a = h_eps(skel, 0.6, [0.4], jump_char, Driver.zero(), terminal, EPS, N=500, h=1 / 16)
        b = h_eps(skel, 0.7, [0.4], jump_char, Driver.zero(), terminal, EPS, N=500, h=1 / 16)
        assert a == b


class TestBernstein:
    def test_reproduces_constants_and_affine(self):
        fit = bernstein_fit(lambda t, x: 2.0 + 0.5 * t - 3.0 * x, [0, -1], [1, 1], [3, 5], delta=1e-12)
        t, x = np.meshgrid(np.linspace(0, 1, 7), np.linspace(-1, 1, 9), indexing="ij")
        assert np.max(np.abs(fit(t, x) - (2.0 + 0.5 * t - 3.0 * x))) < 1e-12

    def test_square_error_is_one_over_4n(self):
        n = 8
        fit = bernstein_fit(lambda x: x**2, [0.0], [1.0], [n], audit=4)
        u = np.linspace(0, 1, 201)
        assert np.max(np.abs(fit(u) - u**2)) == pytest.approx(1 / (4 * n), rel=1e-9)

    def test_error_report(self):
        with pytest.raises(ApproximationError) as err:
            bernstein_fit(lambda x: np.abs(x - 0.5), [0.0], [1.0], [2], delta=1e-3)
        assert err.value.achieved > 1e-3

    def test_samples_must_match_lattice(self):
        with pytest.raises(InputError):
            bernstein_fit(None, [0.0], [1.0], [2], samples=np.zeros(3))


class TestFrozenPide:
    char = Characteristics.constant(b=0.1, sigma=0.3)

    def grid(self, **kw):
        return CylinderGrid(0.0, 0.2, 0.25, 0.5, 1.0, **{"n_inner": 10, "n_t": 32, **kw})

    def test_constant_data(self):
        sol = solve_frozen_pide(lambda t, x: np.full(np.shape(x), 1.7), None, self.char, self.grid())
        assert np.max(np.abs(sol.values - 1.7)) < 1e-12

    def test_harmonic_affine_data(self):
        # x - b t solves the backward equation with c ∂_xx = 0
        h = lambda t, x: np.asarray(x) - 0.1 * t
        sol = solve_frozen_pide(h, None, self.char, self.grid())
        xs = np.linspace(-0.15, 0.15, 7)
        assert np.max(np.abs(sol(0.5, xs) - h(0.5, xs))) < 1e-10

    def test_monotone_in_data(self):
        lo = solve_frozen_pide(lambda t, x: np.sin(np.asarray(x)), None, self.char, self.grid())
        hi = solve_frozen_pide(lambda t, x: np.sin(np.asarray(x)) + 0.01 * np.asarray(x) ** 2, None, self.char,
                               self.grid())
        assert np.all(hi.values >= lo.values - 1e-12)

    def test_grid_error_shrinks_for_smooth_data(self, jump_char):
        g = CylinderGrid(0.0, 0.2, 0.65, 0.0, 1.0, 10, 32)
        h = lambda t, x: np.cos(np.asarray(x))
        _, err = grid_error_estimate(h, None, jump_char, g, [0.0], [0.05])
        _, err_fine = grid_error_estimate(h, None, jump_char, g.refined(), [0.0], [0.05])
        assert err_fine[0] < err[0]

    def test_driver_picard(self, jump_char):
        g = CylinderGrid(0.0, 0.2, 0.65, 0.5, 1.0, 10, 32)
        # 1 + (T - t)/2 solves the equation with f = 1/2 everywhere
        exact = lambda t, x: np.full(np.shape(x), 1.0 + 0.5 * (1.0 - t))
        sol = solve_frozen_pide(exact, lambda t, y, z, p: np.full_like(y, 0.5), jump_char, g)
        assert sol(0.5, 0.0) == pytest.approx(1.25, abs=g.dt)

    def test_explicit_instability_reported(self):
        with pytest.raises(SolverError):
            solve_frozen_pide(lambda t, x: np.zeros(np.shape(x)), None, self.char, self.grid(n_inner=40, n_t=2),
                              scheme="explicit")

    def test_explicit_matches_implicit_when_stable(self):
        h = lambda t, x: np.cos(3 * np.asarray(x))
        g = self.grid(n_inner=5, n_t=400)
        a = solve_frozen_pide(h, None, self.char, g, scheme="explicit")(0.5, 0.0)
        b = solve_frozen_pide(h, None, self.char, g)(0.5, 0.0)
        assert a == pytest.approx(b, abs=1e-3)

    def test_needs_ellipticity(self):
        with pytest.raises(AssumptionError, match="uniform-ellipticity"):
            solve_frozen_pide(lambda t, x: x, None, Characteristics.constant(b=0.1), self.grid())

    def test_outer_radius_covers_jumps(self, jump_char):
        with pytest.raises(InputError):
            solve_frozen_pide(lambda t, x: x, None, jump_char, self.grid())


class TestPsi:
    def test_eps_must_be_below_smallest_jump(self, jump_char, anchor):
        with pytest.raises(AssumptionError, match="jump-size-bounds"):
            PathFrozen(jump_char, Driver.zero(), terminal, anchor, 0.5)

    def test_constant_fixture_is_exact(self, jump_char, anchor):
        c = 1.5
        pf = PathFrozen(jump_char, Driver.zero(), lambda h: np.full(h.n_paths, c), anchor, EPS, config=FAST)
        audit = pf.audit()
        assert audit["theta1"] == c and audit["theta1_se"] == 0.0
        assert audit["psi_at_anchor"] == pytest.approx(c + 0.75 * EPS, abs=1e-12)
        assert audit["margins"]["upper"] == pytest.approx(EPS / 4, abs=1e-12)

    def test_sandwich_generic(self, jump_char, anchor):
        drv = make_driver({"kind": "semilinear", "a_y": -0.1, "a_z": 0.2, "a_p": 0.2}, jump_char)
        pf = PathFrozen(jump_char, drv, lambda h: 0.3 * h.current[:, 0] + 0.1 * np.sin(h.current[:, 0]), anchor,
                        EPS, config=FAST)
        audit = pf.audit()
        assert audit["margins"]["lower"] > EPS / 8 and audit["margins"]["upper"] > EPS / 8
        assert abs(audit["anchor_gap"]) <= 2 * delta(1, EPS)

    def test_continuous_across_hitting_time(self, jump_char, anchor):
        pf = PathFrozen(jump_char, Driver.zero(), terminal, anchor, EPS, config=FAST)
        w = CadlagPath.from_vertices([0.0, 0.5, 0.75, 1.0], [[0.0], [0.0], [0.4], [0.4]])
        hit = 0.5 + 0.25 * EPS / 0.4
        left = pf(hit - 1e-7, w)
        at = pf(hit, w)
        right = pf(hit + 1e-7, w)
        assert pf.segment(hit + 1e-7, w).length == 2 and pf.segment(hit, w).length == 1
        assert left == pytest.approx(at, abs=1e-5) and right == pytest.approx(at, abs=1e-5)

    def test_depth_overflow(self, jump_char, anchor):
        pf = PathFrozen(jump_char, Driver.zero(), terminal, anchor, EPS, depth=1, config=FAST)
        w = CadlagPath.from_vertices([0.0, 0.5, 1.0], [[0.0], [0.0], [1.0]])
        with pytest.raises(EvaluationError):
            pf(0.9, w)

    def test_outside_domain(self, jump_char, anchor):
        pf = PathFrozen(jump_char, Driver.zero(), terminal, anchor, EPS, config=FAST)
        with pytest.raises(EvaluationError):
            pf(0.2, anchor.path)

    def test_threads_and_order_do_not_matter(self, jump_char, anchor):
        w = CadlagPath.from_vertices([0.0, 0.5, 1.0], [[0.0], [0.0], [0.5]])
        probes = [0.95, 0.8, 0.6]
        serial = PathFrozen(jump_char, Driver.zero(), terminal, anchor, EPS, config=FAST)
        a = [serial(t, w) for t in probes]
        cfg = PsiConfig(FAST.theta, FAST.degrees, n_t=FAST.n_t, workers=3)
        threaded = PathFrozen(jump_char, Driver.zero(), terminal, anchor, EPS, config=cfg)
        out = {}
        workers = [threading.Thread(target=lambda t=t: out.__setitem__(t, threaded(t, w))) for t in probes[::-1]]
        for th in workers:
            th.start()
        for th in workers:
            th.join()
        assert [out[t] for t in probes] == a

    def test_partial_comparison(self, jump_char, anchor):
        pf = PathFrozen(jump_char, Driver.zero(), terminal, anchor, EPS, config=FAST)

        def u0(t, w):
            ens = simulate(jump_char, t, w, 4000, 1 / 32, 1)
            return float(ens.X[:, -1, 0].mean()), float(ens.X[:, -1, 0].std() / np.sqrt(4000))

        rep = partial_comparison_check(u0, pf, [(0.5, anchor.path)])
        assert rep["ok"] and rep["points"][0]["margin"] > 0
