"""Experiment driver: invariance suite, pathwise oracles, moment suite, reports.

Configuration files are flat ``key = value`` text (``#`` starts a comment,
``;`` separates several assignments on one line).  Values are parsed as JSON
when possible, so ``domain = [0, 1]`` is a list and ``measure = lebesgue`` a
string.  Reports are JSON with sorted keys, a schema version and the full
provenance (seeds, generator, quadrature) and no timestamps, so identical
configurations give byte-identical reports.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .malliavin import (
    ShiftedProcess,
    commutation_check,
    delta_multi,
    random_lookup_process,
    skorohod,
)
from .moments import IDENTITIES, IdentitySpec, RunningStats, default_workers, run_identity, touchard_recurrence_sequence
from .pointprocess import GENERATOR_ID, AtomicMeasure, Ball, Box, Configuration, ConstantDensity, RngStream, gauss_panels, sample_batch
from .transforms import Transformation, cyclic_check

SCHEMA_VERSION = "1"

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

CONFIG_KEYS = {
    "measure": "intensity measure name (lebesgue | dx_over_x); must match the transformation's source",
    "domain": "measure domain, e.g. [0, 1] or unit_disk (moment checks: lebesgue on [0, 1])",
    "rate": "constant density of a Lebesgue measure",
    "process": "process name (U1 | U2 | U3 | U4 | IND)",
    "functional": "functional F for l22 (one | count | inv1p)",
    "v": "second process for pr1",
    "identity": "identity name (isometry | third | l22 | p01 | c1 | pr1)",
    "n": "order of the identity",
    "form": "expansion form for p01/c1/pr1 (corrected | printed)",
    "transform": "transformation name (identity | halfswap | hull | negmax)",
    "cells": "number of equal-mass cells for the invariance suite",
    "samples": "number of Monte Carlo samples (>= 100)",
    "seed": "integer seed",
    "alpha": "family-wise level of the invariance suite, in (0, 1)",
    "threshold": "z-score threshold of identity checks",
    "trials": "cyclic-check trials of the invariance command (0 = skip)",
    "out": "output path of the JSON report",
}


@dataclass
class ExperimentConfig:
    measure: str = "lebesgue"
    domain: object = (0.0, 1.0)
    rate: float = 1.0
    process: str = "U2"
    functional: str = "one"
    v: str = "U1"
    identity: str = "isometry"
    n: int = 2
    form: str = "corrected"
    transform: str = "halfswap"
    cells: int = 8
    samples: int = 100000
    seed: int = 20240601
    alpha: float = 0.01
    threshold: float = 3.0
    trials: int = 0
    out: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        from .catalog import FUNCTIONALS, MEASURES, PROCESSES, TRANSFORMS

        if self.process not in PROCESSES:
            raise ValueError(f"unknown process {self.process!r}")
        if self.v not in PROCESSES:
            raise ValueError(f"unknown process {self.v!r}")
        if self.functional not in FUNCTIONALS:
            raise ValueError(f"unknown functional {self.functional!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transformation {self.transform!r}")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if self.identity not in IDENTITIES:
            raise ValueError(f"unknown identity {self.identity!r}")
        if self.samples < 100:
            raise ValueError("samples must be at least 100")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.cells < 2:
            raise ValueError("need at least two cells")
        return self

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        kw = {k: v for k, v in d.items() if k in known}
        unknown = {k: v for k, v in d.items() if k not in known}
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(**kw)
        for name, typ in (("rate", float), ("n", int), ("cells", int), ("samples", int), ("seed", int), ("alpha", float), ("threshold", float), ("trials", int)):
            setattr(cfg, name, typ(getattr(cfg, name)))
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        if isinstance(d["domain"], tuple):
            d["domain"] = list(d["domain"])
        return d


def parse_config_text(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0]
        for part in line.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ValueError(f"expected key = value, got {part!r}")
            key, val = (x.strip() for x in part.split("=", 1))
            try:
                out[key] = json.loads(val)
            except json.JSONDecodeError:
                out[key] = val.strip("'\"")
    return out


def write_report(payload: dict, path: Optional[str]) -> str:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def provenance(seed=None, **kw) -> dict:
    from . import __version__

    return {"generator": GENERATOR_ID, "package_version": __version__, "seed": seed, **kw}


# ---------------------------------------------------------------------------
# Equal-mass cells and test functions on the target measure
# ---------------------------------------------------------------------------


def _mass_above(measure, c: float) -> float:
    """``mu({x : x_0 >= c})``."""
    dom = measure.domain
    if isinstance(dom, Box) and dom.dim == 1:
        lo, hi = float(dom.lo[0]), float(dom.hi[0])
        c = min(max(c, lo), hi)
        if c >= hi:
            return 0.0
        x, w = gauss_panels(c, hi, 8, 16)
        return float(np.dot(w, measure.density(x[:, None])))
    if isinstance(dom, Ball) and dom.dim == 2 and isinstance(measure.density, ConstantDensity):
        R = dom.radius
        d = min(max(c - dom.center[0], -R), R)
        seg = R * R * math.acos(d / R) - d * math.sqrt(R * R - d * d)
        return measure.density.rate * seg
    raise TypeError("no top region for this measure")


def top_threshold(measure, mass: float = 0.1) -> float:
    """Level ``c`` with ``mu({x_0 >= c}) = mass``."""
    lo, hi = measure.domain.bbox
    return float(brentq(lambda c: _mass_above(measure, c) - mass, lo[0], hi[0], xtol=1e-14))


class EqualMassCells:
    """Partition of the domain into ``K`` cells of equal intensity mass."""

    def __init__(self, measure, K: int):
        self.measure = measure
        self.K = int(K)
        dom = measure.domain
        if isinstance(dom, Box) and dom.dim == 1:
            total = measure.total_mass
            lo, hi = float(dom.lo[0]), float(dom.hi[0])
            cuts = [lo]
            for i in range(1, self.K):
                cuts.append(brentq(lambda c: _mass_above(measure, c) - total * (1 - i / self.K), lo, hi, xtol=1e-14))
            cuts.append(hi)
            self.edges = np.array(cuts)
            self.kind = "interval"
        elif isinstance(dom, Ball) and dom.dim == 2 and isinstance(measure.density, ConstantDensity):
            if self.K % 2:
                raise ValueError("disk cells need an even count (two rings)")
            self.kind = "disk"
            self.sectors = self.K // 2
            self.r_split = dom.radius / math.sqrt(2.0)
        else:
            raise TypeError("no equal-mass cells for this measure")
        self.cell_mass = measure.total_mass / self.K

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Cell index per point (``-1`` for NaN padding)."""
        bad = ~np.all(np.isfinite(x), axis=-1)
        if self.kind == "interval":
            idx = np.clip(np.searchsorted(self.edges, np.nan_to_num(x[..., 0]), side="right") - 1, 0, self.K - 1)
        else:
            c = self.measure.domain.center
            dx, dy = np.nan_to_num(x[..., 0]) - c[0], np.nan_to_num(x[..., 1]) - c[1]
            ring = (np.hypot(dx, dy) >= self.r_split).astype(int)
            ang = np.mod(np.arctan2(dy, dx), 2 * np.pi)
            sec = np.minimum((ang / (2 * np.pi) * self.sectors).astype(int), self.sectors - 1)
            idx = ring * self.sectors + sec
        return np.where(bad, -1, idx)

    def counts(self, pts, mask) -> np.ndarray:
        idx = np.where(mask, self.assign(pts), -1)
        return np.stack([(idx == k).sum(axis=1) for k in range(self.K)], axis=1)


class TestFunction:
    """Named picklable test function on the target domain."""

    def __init__(self, name: str):
        self.name = name

    def __call__(self, x):
        if self.name == "x":
            return x[..., 0]
        if self.name == "cos2pix":
            return np.cos(2 * np.pi * x[..., 0])
        if self.name == "r2":
            return x[..., 0] ** 2 + x[..., 1] ** 2
        if self.name == "logx":
            return np.log(x[..., 0])
        raise KeyError(self.name)


def test_functions_for(measure) -> list:
    if measure.dim == 2:
        return [TestFunction("x"), TestFunction("r2")]
    if measure.name == "dx_over_x":
        return [TestFunction("x"), TestFunction("logx")]
    return [TestFunction("x"), TestFunction("cos2pix")]


ECF_FREQUENCIES = (0.5, 1.0, 2.0)
MOMENT_ORDERS = (1, 2, 3, 4)


# ---------------------------------------------------------------------------
# Invariance suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvarianceSpec:
    transform: str = "halfswap"
    params: tuple = ()
    cells: int = 8
    top_mass: float = 0.1

    def build(self):
        from .catalog import make_transform

        return make_transform(self.transform, **dict(self.params))


INVARIANCE_DEFAULTS = {
    "identity": (("rate", 16.0),),
    "halfswap": (("rate", 16.0),),
    "hull": (("rate", 10.0),),
    "negmax": (),
}


def _invariance_columns(spec: InvarianceSpec, tau: Transformation):
    K = spec.cells
    names = [f"cov[{i},{j}]" for i, j in itertools.combinations(range(K), 2)]
    for h in test_functions_for(tau.target):
        names += [f"{h.name}^{n}" for n in MOMENT_ORDERS]
        for lam in ECF_FREQUENCIES:
            names += [f"{h.name}:re{lam:g}", f"{h.name}:im{lam:g}"]
    names.append("exceed")
    return names


def _invariance_chunk(spec: InvarianceSpec, seed: int, index: int, rows: int, kmax: int = 200):
    tau = spec.build()
    mu = tau.target
    cells = EqualMassCells(mu, spec.cells)
    gen = RngStream(seed, 2).spawn(index).generator()
    pts, mask = sample_batch(tau.source, rows, gen)
    img = np.where(mask[..., None], tau.images(pts, mask), np.nan)
    counts = cells.counts(img, mask)
    hist = np.bincount(np.minimum(counts.ravel(), kmax), minlength=kmax + 1)
    mcell = cells.cell_mass
    cols = [(counts[:, i] - mcell) * (counts[:, j] - mcell) for i, j in itertools.combinations(range(spec.cells), 2)]
    q = mu.quadrature()
    for h in test_functions_for(mu):
        ih = float(np.dot(q.weights, h(q.nodes)))
        X = np.where(mask, h(np.nan_to_num(img, nan=1.0)), 0.0).sum(axis=1) - ih
        cols += [X**n for n in MOMENT_ORDERS]
        for lam in ECF_FREQUENCIES:
            cols += [np.cos(lam * X), np.sin(lam * X)]
    c = top_threshold(mu, spec.top_mass)
    cols.append(np.any(mask & (np.nan_to_num(img[..., 0], nan=-np.inf) >= c), axis=1).astype(float))
    st = RunningStats.from_rows(_invariance_columns(spec, tau), np.stack(cols, axis=1))
    return st, hist


def chi_square_poisson(hist: np.ndarray, mean: float):
    """Pooled count histogram against Poisson(mean); bins merged to expected >= 5."""
    total = hist.sum()
    kmax = len(hist) - 1
    pmf = stats.poisson.pmf(np.arange(kmax), mean)
    exp = np.append(pmf, stats.poisson.sf(kmax - 1, mean)) * total
    obs_bins, exp_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(hist, exp):
        o_acc += o
        e_acc += e
        if e_acc >= 5:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_bins:
            obs_bins[-1] += o_acc
            exp_bins[-1] += e_acc
        else:
            obs_bins, exp_bins = [o_acc], [e_acc]
    obs, ex = np.array(obs_bins), np.array(exp_bins)
    dof = len(obs) - 1
    if dof < 1:
        return 0.0, 0, 1.0
    stat = float(np.sum((obs - ex) ** 2 / ex))
    return stat, dof, float(stats.chi2.sf(stat, dof))


def _ztest(mean: float, se: float, target: float):
    if se == 0:
        return (0.0, 1.0) if mean == target else (math.inf, 0.0)
    z = (mean - target) / se
    return float(z), float(2 * stats.norm.sf(abs(z)))


def run_invariance(spec: InvarianceSpec, samples: int, seed: int, alpha: float = 0.01, chunk: int = 10000, workers: Optional[int] = None) -> dict:
    """Statistical check that the pushforward of the Poisson law is Poisson.

    Sub-tests: pooled cell-count chi-square, pairwise cell-count covariances,
    moments of compensated test-function integrals against the Touchard
    recurrence, characteristic function against the Levy-Khintchine form,
    and the frequency of an image point in a top region of mass ``top_mass``
    (the max-degeneracy statistic).  Bonferroni across sub-tests.
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    tau = spec.build()
    mu = tau.target
    jobs = [(spec, seed, i, min(chunk, samples - i * chunk)) for i in range((samples + chunk - 1) // chunk)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_invariance_chunk_star, jobs))
    else:
        parts = [_invariance_chunk(*j) for j in jobs]
    st, hist = parts[0]
    hist = hist.copy()
    for s2, h2 in parts[1:]:
        st.merge(s2)
        hist += h2
    se = st.se()
    col = {name: i for i, name in enumerate(st.names)}
    cells = EqualMassCells(mu, spec.cells)
    tests = []
    stat, dof, p = chi_square_poisson(hist, cells.cell_mass)
    tests.append({"name": "chi_square_counts", "statistic": stat, "dof": dof, "p_value": p})
    for i, j in itertools.combinations(range(spec.cells), 2):
        k = col[f"cov[{i},{j}]"]
        z, p = _ztest(st.mean[k], se[k], 0.0)
        tests.append({"name": f"covariance[{i},{j}]", "statistic": z, "p_value": p})
    q = mu.quadrature()
    moments_target = {}
    for h in test_functions_for(mu):
        hv = h(q.nodes)
        powers = [float(np.dot(q.weights, hv**k)) for k in range(2, max(MOMENT_ORDERS) + 1)]
        target = touchard_recurrence_sequence(powers, max(MOMENT_ORDERS) - 1)
        moments_target[h.name] = target
        for n in MOMENT_ORDERS:
            k = col[f"{h.name}^{n}"]
            z, p = _ztest(st.mean[k], se[k], target[n])
            tests.append({"name": f"moment[{h.name},{n}]", "statistic": z, "p_value": p, "target": target[n], "estimate": st.mean[k]})
        for lam in ECF_FREQUENCIES:
            ecf = np.exp(np.dot(q.weights, np.exp(1j * lam * hv) - 1j * lam * hv - 1))
            for part, val in (("re", ecf.real), ("im", ecf.imag)):
                k = col[f"{h.name}:{part}{lam:g}"]
                z, p = _ztest(st.mean[k], se[k], float(val))
                tests.append({"name": f"ecf[{h.name},{part},{lam:g}]", "statistic": z, "p_value": p, "target": float(val)})
    k = col["exceed"]
    c = top_threshold(mu, spec.top_mass)
    p0 = 1 - math.exp(-_mass_above(mu, c))
    hits = int(round(st.mean[k] * st.n))
    bt = stats.binomtest(hits, st.n, p0)
    tests.append({"name": "max_degeneracy", "statistic": hits / st.n, "expected": p0, "p_value": float(bt.pvalue), "threshold": c})
    m = len(tests)
    min_p = min(t["p_value"] for t in tests)
    return {
        "kind": "invariance",
        "transform": tau.to_dict(),
        "source": tau.source.to_dict(),
        "target": mu.to_dict(),
        "samples": samples,
        "cells": spec.cells,
        "alpha": alpha,
        "bonferroni_level": alpha / m,
        "n_tests": m,
        "tests": tests,
        "min_p_value": min_p,
        "family_p_value": min(1.0, m * min_p),
        "verdict": "pass" if min_p >= alpha / m else "fail",
        "provenance": provenance(seed, chunk=chunk, chunks=len(jobs), quadrature=q.describe()),
    }


def _invariance_chunk_star(args):
    return _invariance_chunk(*args)


def calibration(spec: InvarianceSpec, seeds: Sequence[int], samples: int, alpha: float = 0.01) -> dict:
    """Size check: per-sub-test p-values across seeds against the uniform law.

    Each sub-test's p-values over the seeds are compared with U(0, 1) by a
    Kolmogorov-Smirnov test; Bonferroni across sub-tests.  Tests with discrete
    p-values (the binomial exceedance count) are compared with their exact
    null law through randomised p-values.
    """
    pvals: dict = {}
    for seed in seeds:
        rep = run_invariance(spec, samples, seed, alpha)
        rng = np.random.default_rng(seed)
        for t in rep["tests"]:
            p = t["p_value"]
            if t["name"] == "max_degeneracy":
                p = _randomised_binom_p(t, samples, rng)
            pvals.setdefault(t["name"], []).append(p)
    ks = {name: float(stats.kstest(v, "uniform").pvalue) for name, v in pvals.items()}
    m = len(ks)
    min_p = min(ks.values())
    return {
        "kind": "calibration",
        "seeds": list(seeds),
        "samples": samples,
        "ks_p_values": ks,
        "min_ks_p_value": min_p,
        "bonferroni_level": alpha / m,
        "verdict": "pass" if min_p >= alpha / m else "fail",
    }


def _randomised_binom_p(test: dict, n: int, rng) -> float:
    """Randomised two-sided p-value ``P(T > t) + U P(T = t)`` on the |deviation| scale."""
    k = int(round(test["statistic"] * n))
    p0 = test["expected"]
    ks = np.arange(n + 1)
    pmf = stats.binom.pmf(ks, n, p0)
    dev = np.abs(ks - n * p0)
    d = abs(k - n * p0)
    tol = 1e-9
    greater = pmf[dev > d + tol].sum()
    equal = pmf[np.abs(dev - d) <= tol].sum()
    return float(greater + rng.random() * equal)


# ---------------------------------------------------------------------------
# Pathwise oracles on lookup tables
# ---------------------------------------------------------------------------

ORACLE_SUPPORT = np.array([0.1, 0.3, 0.5, 0.7, 0.9])


def _prod_shifted(u, s, j, omega):
    """``prod_p eps^+_{s_{0..j} \\ s_p} u_{s_p}``."""
    val = 1.0
    for p in range(len(s)):
        pts = [s[i] for i in range(j + 1) if i != p]
        val *= u(omega.with_points(pts) if pts else omega, s[p])
    return val


def check_product_expansion(u, s, j, omega, method="enumerate", allow_self=False) -> float:
    """Residual of ``prod eps^+ u = sum_{W subset {0..j}} Delta_W prod u``."""
    lhs = _prod_shifted(u, s, j, omega)
    rhs = 0.0
    for r in range(j + 2):
        for W in itertools.combinations(range(j + 1), r):
            if not W:
                rhs += math.prod(u(omega, x) for x in s)
            else:
                rhs += delta_multi(u, s, j, omega, shifts=W, method=method, allow_self=allow_self)
    return abs(lhs - rhs)


def oracle_pathwise(trials: int, rng, tol: float = 1e-9, nmax: int = 4) -> dict:
    """Exact checks on random 5-point lookup tables.

    (i) product expansion of shifted products into Delta-terms, n <= nmax,
    j <= n, by literal enumeration (and agreement of the three Delta
    methods); (ii) vanishing of full Delta-products for triangular tables;
    (iii) the commutation relation for the Skorohod integral; (iv) its
    binomial power form; (v) a mutation (self-assignment allowed) must be
    detected.  The first violation is returned with its table.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng), 3)
    sup = ORACLE_SUPPORT
    counts = {"product_expansion": 0, "methods_agree": 0, "cyclic_vanishing": 0, "commutation": 0, "binomial_power": 0}
    violations = []

    def fail(kind, u, detail):
        if not violations:
            violations.append({"check": kind, "table": u.to_dict(), **detail})

    for trial in range(trials):
        gen = stream.spawn(trial).generator()
        u = random_lookup_process(gen, sup)
        ut = random_lookup_process(gen, sup, triangular=True)
        weights = gen.uniform(0.2, 1.0, len(sup))
        m = AtomicMeasure(sup, weights)
        for n in range(nmax + 1):
            idx = gen.permutation(len(sup))
            s = [sup[i] for i in idx[: n + 1]]
            rest = [sup[i] for i in idx[n + 1 :]]
            omega = Configuration([x for x in rest if gen.random() < 0.5], dim=1)
            for j in range(n + 1):
                res = check_product_expansion(u, s, j, omega)
                counts["product_expansion"] += 1
                if not res <= tol:
                    fail("product_expansion", u, {"n": n, "j": j, "s": s, "omega": omega.points.tolist(), "residual": res})
                vals = [delta_multi(u, s, j, omega, method=meth) for meth in ("enumerate", "dp", "mobius")]
                counts["methods_agree"] += 1
                if max(vals) - min(vals) > tol:
                    fail("methods_agree", u, {"n": n, "j": j, "values": vals})
            # triangular tables: ordered support, every cyclic gradient product vanishes
            full = delta_multi(ut, s, n, omega, method="enumerate")
            counts["cyclic_vanishing"] += 1
            if n >= 1 and abs(full) > tol:
                fail("cyclic_vanishing", ut, {"n": n, "s": s, "value": full})
        for table in (u, ut):
            t = sup[int(gen.integers(len(sup)))]
            om_pts = [x for x in sup if x != t and gen.random() < 0.5]
            omega = Configuration(om_pts, dim=1)
            lhs, rhs = commutation_check(table, t, omega, m)
            counts["commutation"] += 1
            if abs(lhs - rhs) > tol:
                fail("commutation", table, {"t": t, "omega": om_pts, "lhs": lhs, "rhs": rhs})
            d_shift = skorohod(ShiftedProcess(table, t), omega, m)
            ut_val = table(omega, t)
            for k in range(1, 5):
                left = lhs**k
                right = sum(math.comb(k, i) * ut_val ** (k - i) * d_shift**i for i in range(k + 1))
                counts["binomial_power"] += 1
                if abs(left - right) > tol * max(1.0, abs(left)):
                    fail("binomial_power", table, {"k": k, "t": t, "omega": om_pts, "lhs": left, "rhs": right})
    mutation = _mutation_detected(stream, trials, tol)
    ok = not violations and mutation["detected"]
    return {
        "kind": "oracle",
        "trials": trials,
        "checks": counts,
        "violations": violations,
        "mutation": mutation,
        "tolerance": tol,
        "verdict": "pass" if ok else "fail",
    }


def _mutation_detected(stream: RngStream, trials: int, tol: float) -> dict:
    """Allowing ``i in S_i`` must break the product expansion at ``n = 1, j = 0``."""
    sup = ORACLE_SUPPORT
    for trial in range(trials):
        gen = stream.spawn(10**6 + trial).generator()
        u = random_lookup_process(gen, sup)
        s = [sup[0], sup[1]]
        omega = Configuration([sup[3]], dim=1)
        res = check_product_expansion(u, s, 0, omega, allow_self=True)
        if res > tol:
            return {"detected": True, "trial": trial, "residual": res}
    return {"detected": False}


# ---------------------------------------------------------------------------
# Moment suite
# ---------------------------------------------------------------------------


def same_measure(a, b) -> bool:
    """Same family and domain (densities are compared through ``rate`` elsewhere)."""
    return a.name == b.name and a.domain.to_dict() == b.domain.to_dict()


def run_moment_suite(cfg: ExperimentConfig, identities: Optional[Sequence[str]] = None, orders: Optional[Sequence[int]] = None) -> dict:
    """Run identity checks for ``cfg.process``; exact path where available."""
    from .catalog import make_measure

    cfg.validate()
    if not same_measure(make_measure(cfg.measure, domain=cfg.domain), make_measure("lebesgue")):
        raise ValueError("the catalog processes are defined for a Lebesgue measure on [0, 1]")
    names = list(identities) if identities else [cfg.identity]
    reports = []
    for name in names:
        ns = orders if orders else [cfg.n]
        if name in ("isometry",):
            ns = [2]
        elif name == "third":
            ns = [3]
        for n in ns:
            spec = IdentitySpec(name, cfg.process, n, cfg.functional, cfg.v, cfg.rate, form=cfg.form)
            rep = run_identity(spec, cfg.samples, cfg.seed, threshold=cfg.threshold)
            reports.append(rep.to_dict())
    ok = all(r["verdict"] == "pass" for r in reports)
    return {
        "kind": "moments",
        "config": cfg.to_dict(),
        "reports": reports,
        "verdict": "pass" if ok else "fail",
        "provenance": provenance(cfg.seed),
    }


def run_cyclic_checks(transform: str, ks: Sequence[int], trials: int, seed: int, params: tuple = ()) -> dict:
    from .catalog import make_transform

    tau = make_transform(transform, **dict(params))
    out = {}
    for k in ks:
        hit = cyclic_check(tau, k, trials, RngStream(seed, 4).spawn(k).generator())
        out[str(k)] = hit
    return {"transform": tau.to_dict(), "trials": trials, "violations": out}
