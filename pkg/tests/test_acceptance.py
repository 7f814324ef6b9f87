"""Acceptance criteria, run at their stated sample sizes and tolerances.

Each test records one PASS/FAIL line; the lines are collected in the
``acceptance criteria`` section of the pytest terminal summary.
"""

import time
from fractions import Fraction

from ppinv import harness
from ppinv.combinatorics import (
    aggregated_coeff,
    bell_bruteforce,
    centered_touchard,
    compensated_poisson_moment,
    identity_expansion,
    partition_count_oracle,
    specialized_moment,
    stirling_no_singleton,
    stirling_no_singleton_dual,
    stirling_second,
    stirling_second_dual,
    touchard,
)
from ppinv.harness import INVARIANCE_DEFAULTS, InvarianceSpec, run_invariance, write_report
from ppinv.moments import IdentitySpec, run_identity

SEED = 20240601
MC_SAMPLES = 10**6
INV_SAMPLES = 10**5


def spec(name):
    return InvarianceSpec(name, INVARIANCE_DEFAULTS[name])


def test_criterion_01_exact_combinatorics(accept):
    t0 = time.perf_counter()
    touch = all(centered_touchard(n) == compensated_poisson_moment(n) for n in range(13))
    duals = all(
        stirling_no_singleton(n, a) == stirling_no_singleton_dual(n, a) for n in range(13) for a in range(n + 1)
    ) and all(stirling_second(m, n) == stirling_second_dual(m, n) for m in range(13) for n in range(m + 1))
    bell = all(touchard(n)(1) == bell_bruteforce(n) for n in range(9))
    dt = time.perf_counter() - t0
    accept(1, touch and duals and bell and dt < 10, f"touchard={touch} duals={duals} bell={bell} {dt:.2f}s")


def test_criterion_02_coefficient_oracle(accept):
    t0 = time.perf_counter()
    agree = all(
        aggregated_coeff(nt, a, c) == partition_count_oracle(nt, a, c)
        for nt in range(9)
        for a in range(nt + 1)
        for c in range(nt - a + 1)
    )
    two, three = identity_expansion(2), identity_expansion(3)
    shown2 = [two.get(k) for k in [(0, 2), (1, 2), (1, 1), (2, 2)]] == [1, -2, 1, 1] and len(two) == 4
    order3 = [(1, 1), (1, 2), (2, 2), (0, 3), (1, 3), (2, 3), (3, 3)]
    shown3 = [three.get(k) for k in order3] == [1, -3, 3, -1, 3, -3, 1] and len(three) == 7
    dt = time.perf_counter() - t0
    accept(2, agree and shown2 and shown3 and dt < 60, f"oracle={agree} n2={shown2} n3={shown3} {dt:.2f}s")


def test_criterion_03_specialization(accept):
    t0 = time.perf_counter()
    ok = all(
        specialized_moment(n)(lam) == centered_touchard(n)(lam)
        for n in range(7)
        for lam in (Fraction(1, 2), Fraction(1), Fraction(2))
    )
    dt = time.perf_counter() - t0
    accept(3, ok and dt < 1, f"rational equality n<=6 {dt:.3f}s")


def test_criterion_04_pathwise_oracles(accept):
    t0 = time.perf_counter()
    rep = harness.oracle_pathwise(100, SEED, tol=1e-9, nmax=4)
    dt = time.perf_counter() - t0
    ok = rep["verdict"] == "pass" and rep["mutation"]["detected"] and dt < 60
    accept(4, ok, f"checks={rep['checks']} violations={len(rep['violations'])} mutation={rep['mutation']['detected']} {dt:.1f}s")


def _mc(name, process, n, samples=MC_SAMPLES):
    return run_identity(IdentitySpec(name, process, n), samples, SEED, threshold=3.0, workers=1).to_dict()


def test_criterion_05_isometry_third(accept):
    t0 = time.perf_counter()
    u2 = [_mc("isometry", "U2", 2), _mc("third", "U2", 3)]
    u3 = [_mc("isometry", "U3", 2, 10**5), _mc("third", "U3", 3, 10**5)]
    dt = time.perf_counter() - t0
    mc_ok = all(r["verdict"] == "pass" for r in u2)
    zero = all(g["max_abs"] == 0.0 for r in u3 for k, g in r["groups"].items() if k != "main")
    z = ", ".join(f"{r['identity']} z={r['z_score']:.2f}" for r in u2)
    accept(5, mc_ok and zero and dt < 600, f"U2 {z}; U3 delta terms zero={zero} {dt:.1f}s")


def test_criterion_06_identities_mc(accept):
    t0 = time.perf_counter()
    reps = [_mc(name, "U2", n) for name in ("l22", "p01") for n in (2, 3)] + [_mc("pr1", "U2", k) for k in (1, 2)]
    dt = time.perf_counter() - t0
    ok = all(r["verdict"] == "pass" for r in reps) and dt < 1800
    z = ", ".join(f"{r['identity']}(n={r['n']}) z={r['z_score']:.2f}" for r in reps)
    accept(6, ok, f"{z} {dt:.1f}s")


def test_criterion_07_invariance_positive(accept):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in ("halfswap", "hull"):
        rep = run_invariance(spec(name), INV_SAMPLES, SEED, alpha=0.01, workers=1)
        cyc = harness.run_cyclic_checks(name, (2, 3, 4), 10**4, SEED, INVARIANCE_DEFAULTS[name])
        clean = all(v is None for v in cyc["violations"].values())
        ok &= rep["verdict"] == "pass" and clean
        parts.append(f"{name} {rep['verdict']} min_p={rep['min_p_value']:.4f} cyclic_clean={clean}")
    dt = time.perf_counter() - t0
    accept(7, ok and dt < 900, "; ".join(parts) + f" {dt:.1f}s")


def test_criterion_08_negative_control(accept):
    t0 = time.perf_counter()
    rep = run_invariance(spec("negmax"), 10**4, SEED, alpha=0.01, workers=1)
    p = {t["name"]: t for t in rep["tests"]}["max_degeneracy"]["p_value"]
    hit = harness.run_cyclic_checks("negmax", (2,), 10**3, SEED)["violations"]["2"]
    dt = time.perf_counter() - t0
    ok = rep["verdict"] == "fail" and p < 1e-6 and hit is not None and dt < 120
    accept(8, ok, f"max_degeneracy p={p:.3g} cyclic violation at trial {hit and hit['trial']} {dt:.1f}s")


def test_criterion_09_calibration(accept):
    t0 = time.perf_counter()
    rep = harness.calibration(spec("identity"), range(200), 10**4, alpha=0.01)
    dt = time.perf_counter() - t0
    worst = min(rep["ks_p_values"].items(), key=lambda kv: kv[1])
    below = sum(p < 0.01 for p in rep["ks_p_values"].values())
    detail = (
        f"{len(rep['ks_p_values'])} sub-tests, min KS p={worst[1]:.4f} ({worst[0]}), "
        f"family level={rep['bonferroni_level']:.2g}, {below} raw KS p below 0.01 {dt:.1f}s"
    )
    accept(9, rep["verdict"] == "pass" and dt < 1800, detail)


def test_criterion_10_determinism(accept, tmp_path):
    from ppinv.cli import main

    same = []
    for args in (
        ["invariance", "--transform", "halfswap", "--samples", "20000", "--cyclic-trials", "500"],
        ["moments", "verify", "--process", "U2", "--identity", "p01", "--n", "2", "--samples", "20000"],
        ["moments", "verify", "--process", "U1", "--all", "--orders", "1,2,3", "--samples", "100"],
        ["oracle", "--trials", "3"],
        ["combi", "verify"],
    ):
        outs = [tmp_path / f"r{i}.out" for i in range(2)]
        for o in outs:
            main(args + ["--out", str(o)])
        same.append(outs[0].read_bytes() == outs[1].read_bytes())
    rep = run_invariance(spec("identity"), 5000, SEED, chunk=1000, workers=1)
    rep2 = run_invariance(spec("identity"), 5000, SEED, chunk=1000, workers=2)
    same.append(write_report(rep, None) == write_report(rep2, None))
    accept(10, all(same), f"byte-identical reruns {sum(same)}/{len(same)} (incl. 1 vs 2 workers)")
