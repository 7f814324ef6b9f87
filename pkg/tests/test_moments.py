from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppinv.catalog import U1, U2, U3, Indicator, make_process
from ppinv.combinatorics import centered_touchard
from ppinv.malliavin import CellFunctional, CellProcess, ConstantFunctional, CountFunctional, DeterministicProcess, random_cell_process
from ppinv.moments import (
    ExactCellEngine,
    IdentitySpec,
    PreconditionError,
    RunningStats,
    build_identity,
    c1_identity,
    compensated_moment_partitions,
    deterministic_power_integrals,
    exact_identity,
    mc_moment,
    p01_identity,
    pr1_identity,
    run_identity,
    touchard_recurrence_sequence,
)
from ppinv.pointprocess import RngStream, lebesgue

ENGINE = ExactCellEngine(cells=2, rate=1.0, nmax=18)
EXACT_TOL = 1e-12


def cell_process(seed, predictable=False):
    return random_cell_process(np.random.default_rng(seed), ENGINE.edges, cap=3, predictable=predictable)


def parity_process(vals=(0.7, -1.3), cap=3):
    """Swaps its two cell values with the parity of the code: int u^k is constant."""
    vals = np.asarray(vals)
    codes = np.arange((cap + 1) ** 2)
    par = (codes % (cap + 1) + codes // (cap + 1)) % 2
    table = np.stack([vals[(c + par) % 2] for c in range(2)], axis=1)
    return CellProcess(ENGINE.edges, table, cap), {k: float(0.5 * np.sum(vals**k)) for k in range(1, 7)}


class TestRecurrence:
    def test_indicator_gives_centered_touchard(self):
        lam = Fraction(2)
        m = touchard_recurrence_sequence([lam] * 6, 6)
        assert m[0] == 1 and m[1] == 0
        for n in range(2, 7):
            assert m[n] == centered_touchard(n)(lam)

    def test_second_moment_is_isometry(self):
        assert touchard_recurrence_sequence([Fraction(7, 3)], 1) == [1, 0, Fraction(7, 3)]

    def test_third_moment_of_linear_function(self):
        m = touchard_recurrence_sequence([Fraction(1, 3), Fraction(1, 4)], 2)
        assert m[3] == Fraction(1, 4)
        est = _compensated_linear_moment(3)
        assert abs(est.mean - 0.25) < 3 * est.std_error

    @given(st.lists(st.fractions(-3, 3, max_denominator=20), min_size=5, max_size=5))
    def test_matches_partition_sum(self, powers):
        I = {k + 2: p for k, p in enumerate(powers)}
        rec = touchard_recurrence_sequence(powers, 5)
        for n in range(7):
            assert rec[n] == compensated_moment_partitions(I, n)

    def test_validation(self):
        with pytest.raises(ValueError):
            touchard_recurrence_sequence([1], 3)


def _compensated_linear_moment(n):
    from ppinv.malliavin import SkorohodFunctional

    u = DeterministicProcess(lambda t: t[..., 0])
    return mc_moment(SkorohodFunctional(u, lebesgue()), lebesgue(), n, 2 * 10**5, RngStream(31))


class TestMcMoment:
    def test_constant(self):
        est = mc_moment(ConstantFunctional(2.0), lebesgue(), 3, 1000, RngStream(1))
        assert est.mean == 8.0 and est.std_error == 0.0

    def test_count_mean(self):
        est = mc_moment(CountFunctional(), lebesgue(), 1, 10**6, RngStream(2))
        assert abs(est.mean - 1.0) < 3 * est.std_error

    def test_centered_count_fourth(self):
        est = mc_moment(CountFunctional(offset=1.0), lebesgue(), 4, 10**6, RngStream(3))
        assert abs(est.mean - 4.0) < 3 * est.std_error

    def test_reproducible(self):
        a = mc_moment(CountFunctional(), lebesgue(), 2, 5000, RngStream(4))
        b = mc_moment(CountFunctional(), lebesgue(), 2, 5000, RngStream(4))
        assert a == b


class TestRunningStats:
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=60), st.integers(1, 59))
    def test_merge_equals_pooled(self, xs, cut):
        cut = min(cut, len(xs) - 1)
        rows = np.array(xs)[:, None]
        a = RunningStats.from_rows(["x"], rows[:cut]).merge(RunningStats.from_rows(["x"], rows[cut:]))
        b = RunningStats.from_rows(["x"], rows)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)
        np.testing.assert_allclose(a.m2, b.m2, rtol=1e-9, atol=1e-7)
        assert a.maxabs == b.maxabs


class TestExactCellEngine:
    @pytest.mark.parametrize("predictable", [False, True])
    @pytest.mark.parametrize("name,n", [("isometry", 2), ("third", 3), ("p01", 1), ("p01", 2), ("p01", 3)])
    def test_identities_exact(self, predictable, name, n):
        u = cell_process(1, predictable)
        r = ENGINE.evaluate(build_identity(name, u, n))
        assert r["truncation_error"] < 1e-12
        assert abs(r["diff"]) < EXACT_TOL
        assert abs(r["lhs"]) > 1e-3

    def test_p01_fourth_order(self):
        r = ENGINE.evaluate(p01_identity(cell_process(1), 4))
        assert abs(r["diff"]) < EXACT_TOL

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_l22_with_random_functional(self, n):
        u = cell_process(2)
        F = CellFunctional(ENGINE.edges, np.random.default_rng(3).uniform(-1, 1, 16), cap=3)
        r = ENGINE.evaluate(build_identity("l22", u, n, F=F))
        assert abs(r["diff"]) < EXACT_TOL

    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_pr1(self, k):
        r = ENGINE.evaluate(pr1_identity(cell_process(1), cell_process(2), k))
        assert abs(r["diff"]) < EXACT_TOL

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_c1_parity_process(self, n):
        u, powers = parity_process()
        r = ENGINE.evaluate(c1_identity(u, n, powers))
        assert abs(r["diff"]) < EXACT_TOL

    def test_printed_shift_sets_fail(self):
        # the binomial-prefix form of the shift sets is not an identity once
        # the coefficients depend on the order of the composition
        u = cell_process(1)
        assert abs(ENGINE.evaluate(p01_identity(u, 3, "printed"))["diff"]) > 1e-2
        assert abs(ENGINE.evaluate(pr1_identity(u, cell_process(2), 3, "printed"))["diff"]) > 1e-4
        up, powers = parity_process()
        assert abs(ENGINE.evaluate(c1_identity(up, 3, powers, "printed"))["diff"]) > 1e-2

    def test_printed_agrees_at_low_order(self):
        u = cell_process(1)
        for n in (1, 2):
            assert abs(ENGINE.evaluate(p01_identity(u, n, "printed"))["diff"]) < EXACT_TOL

    def test_predictable_cyclic_terms_vanish_pathwise(self):
        u = cell_process(4, predictable=True)
        for n in (2, 3):
            r = ENGINE.evaluate(p01_identity(u, n))
            assert r["max_abs"]["delta_cyclic"] == 0.0

    def test_predictable_noncyclic_terms(self):
        # for a general predictable process the non-cyclic Delta-terms do not
        # vanish; at n = 2 they add up to E[delta(u) int u^2]
        u = cell_process(1, predictable=True)
        r = ENGINE.evaluate(p01_identity(u, 2))
        target = ENGINE.expectation(lambda c: c.delta(u) * c.powint(u, 2))
        assert abs(r["delta"]) > 1e-4
        np.testing.assert_allclose(r["delta"], target, atol=1e-14)


class TestExactPath:
    @pytest.mark.parametrize("name", ["isometry", "third", "l22", "p01", "c1", "pr1"])
    def test_deterministic_all_pass(self, name):
        for n in (1, 2, 3):
            rep = run_identity(IdentitySpec(name, "U1", n), 100, 0)
            assert rep.exact and rep.verdict
            assert rep.lhs.std_error == 0.0 and rep.diff_se == 0.0
            assert Fraction(rep.lhs.exact) == Fraction(rep.rhs.exact)

    def test_isometry_value(self):
        rep = exact_identity("isometry", U1(), 2, lebesgue())
        assert rep.lhs.exact == "7/3"

    def test_indicator_third_moment(self):
        lam = Fraction(1, 2)
        rep = exact_identity("l22", Indicator(0.5), 3, lebesgue())
        assert Fraction(rep.lhs.exact) == centered_touchard(3)(lam) == lam

    @pytest.mark.parametrize("name", ["l22", "p01", "c1"])
    def test_high_orders(self, name):
        for n in (5, 6):
            rep = exact_identity(name, Indicator(0.5), n, lebesgue())
            assert Fraction(rep.lhs.exact) == Fraction(rep.rhs.exact)
        # indicator of a set of mass 1/2: the centered Poisson moment
        rep = exact_identity("l22", Indicator(0.5), 6, lebesgue())
        assert Fraction(rep.lhs.exact) == centered_touchard(6)(Fraction(1, 2))

    def test_pr1_order_zero(self):
        rep = exact_identity("pr1", U1(), 0, lebesgue(), v=U1())
        assert Fraction(rep.lhs.exact) == Fraction(3, 2) == Fraction(rep.rhs.exact)

    def test_no_exact_path_for_random_process(self):
        assert exact_identity("isometry", U2(), 2, lebesgue()) is None
        with pytest.raises(PreconditionError):
            run_identity(IdentitySpec("isometry", "U2"), 100, 0, exact="always")


class TestMonteCarlo:
    def test_isometry_anticipating(self):
        rep = run_identity(IdentitySpec("isometry", "U2"), 2 * 10**5, 7)
        assert rep.verdict and not rep.exact
        cyc = rep.groups["delta_cyclic"]
        assert abs(cyc["mean"]) > 5 * cyc["std_error"]  # the cross term matters

    def test_isometry_predictable_cross_term_zero(self):
        rep = run_identity(IdentitySpec("isometry", "U3"), 10**5, 7)
        assert rep.verdict
        assert rep.groups["delta_cyclic"]["max_abs"] == 0.0

    def test_third_predictable(self):
        rep = run_identity(IdentitySpec("third", "U3"), 10**5, 8)
        assert rep.verdict
        assert rep.groups["delta_cyclic"]["max_abs"] == 0.0

    def test_p01_predictable_delta_terms_zero(self):
        rep = run_identity(IdentitySpec("p01", "U3", 3), 5 * 10**4, 9)
        assert rep.verdict
        assert rep.groups["delta"]["max_abs"] == 0.0
        assert rep.groups["delta_cyclic"]["max_abs"] == 0.0

    def test_c1_precondition(self):
        with pytest.raises(PreconditionError):
            run_identity(IdentitySpec("c1", "U2", 2), 1000, 1)
        powers = deterministic_power_integrals(make_process("U4"), lebesgue(), 4, 1)
        np.testing.assert_allclose(powers[1], 1.5, rtol=1e-12)

    def test_c1_composed_process(self):
        rep = run_identity(IdentitySpec("c1", "U4", 2), 10**5, 10)
        assert rep.verdict

    def test_worker_count_does_not_change_result(self):
        spec = IdentitySpec("p01", "U2", 2)
        a = run_identity(spec, 4000, 3, chunk=1000, workers=1)
        b = run_identity(spec, 4000, 3, chunk=1000, workers=2)
        assert a.to_dict() == b.to_dict()

    def test_order_validation(self):
        with pytest.raises(ValueError):
            run_identity(IdentitySpec("p01", "U2", 5), 100, 1)
        with pytest.raises(ValueError):
            run_identity(IdentitySpec("p01", "U2", 2), 1, 1)
