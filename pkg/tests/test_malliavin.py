import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppinv.catalog import U1, U2, U3
from ppinv.harness import check_product_expansion
from ppinv.malliavin import (
    BatchContext,
    ConstantFunctional,
    CountFunctional,
    DeterministicProcess,
    LookupTableFunctional,
    LookupTableProcess,
    ShiftedProcess,
    SkorohodFunctional,
    commutation_check,
    compensated_integral,
    delta_multi,
    eps_plus,
    gradient_D,
    gradient_iterated,
    random_lookup_process,
    skorohod,
    theta_assignments,
)
from ppinv.pointprocess import AtomicMeasure, Configuration, Interval, RngStream, batch_from_configs, lebesgue, sample_batch

SUPPORT = np.array([0.1, 0.3, 0.5, 0.7, 0.9])


def lookup(seed, triangular=False):
    return random_lookup_process(np.random.default_rng(seed), SUPPORT, triangular)


class TestShiftAndGradient:
    def test_constant(self):
        om = Configuration([0.2])
        assert eps_plus(ConstantFunctional(3.0), 0.5, om) == 3.0
        assert gradient_D(ConstantFunctional(3.0), 0.5, om) == 0.0

    def test_counting(self):
        F = CountFunctional(Interval(0.0, 0.5))
        om = Configuration([0.2, 0.7])
        assert eps_plus(F, 0.3, om) == 2
        assert gradient_D(F, 0.3, om) == 1
        assert gradient_D(F, 0.6, om) == 0
        assert gradient_D(F, 0.2, om) == 0  # already present
        assert eps_plus(F, 0.2, om) == F(om)

    def test_iterated_empty_and_single(self):
        F = CountFunctional(Interval(0.0, 0.5))
        om = Configuration([0.2])
        assert gradient_iterated(F, [], om) == F(om)
        assert gradient_iterated(F, [0.3], om) == gradient_D(F, 0.3, om)

    def test_iterated_order_independent(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            F = LookupTableFunctional(SUPPORT, rng.uniform(-1, 1, 32))
            om = Configuration([x for x in SUPPORT[:2] if rng.random() < 0.5])
            theta = list(SUPPORT[2:])
            a = gradient_iterated(F, theta, om)
            b = gradient_iterated(F, list(rng.permutation(theta)), om)
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_iterated_needs_distinct(self):
        with pytest.raises(ValueError):
            gradient_iterated(ConstantFunctional(), [0.3, 0.3], Configuration([]))


class TestLookupTables:
    def test_scalar_and_batch_agree(self):
        u = lookup(1)
        ut = lookup(2, triangular=True)
        rng = np.random.default_rng(3)
        confs = [Configuration([x for x in SUPPORT if rng.random() < 0.5], dim=1) for _ in range(20)]
        pts, mask = batch_from_configs(confs)
        t = np.broadcast_to(SUPPORT[None, :, None], (20, 5, 1))
        for proc in (u, ut):
            batch = proc.values(pts, mask, t)
            scalar = np.array([[proc(c, x) for x in SUPPORT] for c in confs])
            np.testing.assert_array_equal(batch, scalar)

    def test_triangular_reads_only_lower_points(self):
        ut = lookup(4, triangular=True)
        om = Configuration([0.1])
        # adding a point at or above 0.5 never changes the value at 0.5
        assert ut(om.with_point(0.7), 0.5) == ut(om, 0.5)
        assert ut(om.with_point(0.5), 0.5) == ut(om, 0.5)

    def test_table_shape_checked(self):
        with pytest.raises(ValueError):
            LookupTableProcess(SUPPORT, np.zeros((4, 5)))


class TestDelta:
    def test_single_point_vanishes(self):
        u = lookup(5)
        assert delta_multi(u, [0.1], 0, Configuration([], dim=1)) == 0.0

    def test_two_point_cyclic_product(self):
        u = lookup(6)
        om = Configuration([0.9])
        s, t = 0.1, 0.3
        expect = gradient_D(lambda c: u(c, t), s, om) * gradient_D(lambda c: u(c, s), t, om)
        for method in ("enumerate", "dp", "mobius"):
            np.testing.assert_allclose(delta_multi(u, [s, t], 1, om, method=method), expect, atol=1e-15)

    def test_deterministic_vanishes(self):
        u = U1()
        om = Configuration([0.9])
        for n in range(1, 4):
            s = list(SUPPORT[: n + 1])
            for j in range(n + 1):
                assert delta_multi(u, s, j, om) == 0.0

    @settings(max_examples=40)
    @given(st.integers(0, 10**6), st.integers(0, 3), st.data())
    def test_methods_agree(self, seed, n, data):
        u = lookup(seed)
        j = data.draw(st.integers(0, n))
        rng = np.random.default_rng(seed)
        idx = rng.permutation(5)
        s = list(SUPPORT[idx[: n + 1]])
        om = Configuration([x for x in SUPPORT[idx[n + 1 :]] if rng.random() < 0.5], dim=1)
        powers = list(rng.integers(1, 3, n + 1))
        vals = [delta_multi(u, s, j, om, powers=powers, method=m) for m in ("enumerate", "dp", "mobius")]
        np.testing.assert_allclose(vals, vals[0], atol=1e-12)

    @settings(max_examples=25)
    @given(st.integers(0, 10**6), st.integers(0, 3), st.data())
    def test_product_expansion(self, seed, n, data):
        u = lookup(seed)
        j = data.draw(st.integers(0, n))
        s = list(SUPPORT[: n + 1])
        om = Configuration([x for x in SUPPORT[n + 1 :]][:1], dim=1)
        assert check_product_expansion(u, s, j, om) <= 1e-9

    def test_mutation_detected(self):
        u = lookup(7)
        om = Configuration([0.7])
        assert check_product_expansion(u, [0.1, 0.3], 0, om, allow_self=True) > 1e-9

    def test_triangular_cyclic_products_vanish(self):
        for seed in range(20):
            ut = lookup(seed, triangular=True)
            for n in range(1, 5):
                s = list(np.random.default_rng(seed + n).permutation(SUPPORT)[: n + 1])
                assert delta_multi(ut, s, n, Configuration([], dim=1)) == 0.0

    def test_theta_assignment_count(self):
        # each of the j+1 shift points picks a non-empty subset of the other n positions
        for n in range(1, 4):
            for j in range(n + 1):
                assert sum(1 for _ in theta_assignments(n, j)) == (2**n - 1) ** (j + 1)

    def test_distinct_points_required(self):
        with pytest.raises(ValueError):
            delta_multi(lookup(0), [0.1, 0.1], 1, Configuration([], dim=1))


class TestBatchContext:
    def test_matches_pathwise(self):
        u = lookup(8)
        rng = np.random.default_rng(8)
        rows = []
        confs, S = [], []
        for _ in range(30):
            idx = rng.permutation(5)
            S.append(SUPPORT[idx[:3]])
            confs.append(Configuration([x for x in SUPPORT[idx[3:]] if rng.random() < 0.5], dim=1))
        pts, mask = batch_from_configs(confs)
        s = np.array(S)[..., None]
        ctx = BatchContext(pts, mask, s, lebesgue())
        factors = ((u, 1), (u, 2), (u, 1))
        for shifts in [(0,), (0, 1), (0, 1, 2), (1, 2)]:
            got = ctx.Delta(shifts, factors)
            want = [delta_multi(u, list(S[r]), 2, confs[r], powers=[1, 2, 1], shifts=shifts) for r in range(30)]
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_delta_of_shifted_process(self):
        u = U2()
        m = lebesgue()
        pts, mask = sample_batch(m, 50, RngStream(2).generator())
        s = m.sample_points(RngStream(3).generator(), 50).reshape(50, 1, 1)
        ctx = BatchContext(pts, mask, s, m)
        got = ctx.delta(u, (0,))
        for r in range(50):
            om = Configuration(pts[r][mask[r]], dim=1)
            want = skorohod(ShiftedProcess(u, s[r, 0]), om, m)
            np.testing.assert_allclose(got[r], want, rtol=1e-12, atol=1e-12)


class TestSkorohod:
    def test_deterministic_is_compensated_integral(self):
        m = lebesgue()
        u = DeterministicProcess(lambda t: np.sin(3 * t[..., 0]))
        om = Configuration([0.2, 0.6])
        np.testing.assert_allclose(skorohod(u, om, m), compensated_integral(lambda x: np.sin(3 * x[..., 0]), om, m), atol=1e-12)

    def test_empty_configuration(self):
        u = DeterministicProcess(lambda t: np.ones(t.shape[:-1]))
        np.testing.assert_allclose(skorohod(u, Configuration([], dim=1), lebesgue()), -1.0, atol=1e-13)

    def test_zero_integrand(self):
        assert compensated_integral(lambda x: 0.0 * x[..., 0], Configuration([0.4]), lebesgue()) == 0.0

    def test_anticipating_mean_zero(self):
        m = lebesgue()
        F = SkorohodFunctional(U2(), m)
        pts, mask = sample_batch(m, 10**5, RngStream(21).generator())
        v = F.values(pts, mask)
        assert abs(v.mean()) < 3 * v.std() / np.sqrt(len(v))

    def test_compensated_integral_isometry_and_ecf(self):
        m = lebesgue()
        pts, mask = sample_batch(m, 10**6, RngStream(22).generator())
        F = SkorohodFunctional(U1(), m)
        x = F.values(pts, mask)
        # variance equals int (1+t)^2 dt = 7/3
        sq = x**2
        assert abs(sq.mean() - 7 / 3) < 3 * sq.std() / np.sqrt(len(x))
        q = m.quadrature()
        f = 1.0 + q.nodes[:, 0]
        for lam in (0.5, 1.0, 2.0):
            target = np.exp(np.dot(q.weights, np.exp(1j * lam * f) - 1j * lam * f - 1))
            for part, emp in ((target.real, np.cos(lam * x)), (target.imag, np.sin(lam * x))):
                assert abs(emp.mean() - part) < 3 * emp.std() / np.sqrt(len(x))


class TestCommutation:
    def test_random_tables(self):
        rng = np.random.default_rng(9)
        m = AtomicMeasure(SUPPORT, rng.uniform(0.2, 1.0, 5))
        for seed in range(100):
            u = lookup(seed, triangular=bool(seed % 2))
            t = SUPPORT[seed % 5]
            om = Configuration([x for x in SUPPORT if x != t and rng.random() < 0.5], dim=1)
            lhs, rhs = commutation_check(u, t, om, m)
            assert abs(lhs - rhs) <= 1e-9

    def test_deterministic_and_zero(self):
        m = lebesgue()
        om = Configuration([0.3])
        lhs, rhs = commutation_check(U1(), 0.6, om, m)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)
        np.testing.assert_allclose(lhs - skorohod(U1(), om, m), 1.6, atol=1e-9)
        zero = DeterministicProcess(lambda t: np.zeros(t.shape[:-1]))
        assert commutation_check(zero, 0.6, om, m) == (0.0, 0.0)

    def test_point_in_omega_rejected(self):
        with pytest.raises(ValueError):
            commutation_check(U1(), 0.3, Configuration([0.3]), lebesgue())

    def test_predictable_process(self):
        m = lebesgue()
        om = Configuration([0.2, 0.8])
        for t in (0.1, 0.5, 0.95):
            lhs, rhs = commutation_check(U3(), t, om, m)
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)
