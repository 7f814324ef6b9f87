"""Both sides of the Skorohod-integral moment identities.

Each identity is a list of left-hand and right-hand terms.  A term is a
coefficient, a number ``b`` of auxiliary integration points and a function
of a :class:`~ppinv.malliavin.BatchContext` returning one value per row.  The
value of a term is ``coef * sigma(X)**b * E[fn]`` where the integration points
are i.i.d. from the normalised intensity, so the same description is
evaluated

* by paired Monte Carlo (:func:`run_identity`): configurations and points are
  shared by both sides and the row-wise difference gives the z-score;
* exactly (:class:`ExactCellEngine`) for processes that depend on the
  configuration only through cell counts;
* in rational arithmetic (:func:`exact_identity`) for deterministic
  integrands whose power integrals are known exactly.

Available identities: ``isometry``, ``third``, ``l22`` (the general
``n``-th moment expansion with coefficients ``C``), ``p01`` (the recursive
form), ``c1`` (the recursive form when ``int u^k`` is deterministic) and
``pr1`` (moments of shifted integrals against a second process ``v``).
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import poisson

from .combinatorics import coeff_C, compositions, format_exact, set_partitions
from .malliavin import BatchContext, CellProcess, PointProcess, RandomFunctional
from .pointprocess import GENERATOR_ID, RngStream, lebesgue, sample_batch

MAX_ORDER = 4


class PreconditionError(ValueError):
    """The chosen process is outside the scope of the requested identity."""


# ---------------------------------------------------------------------------
# Estimates and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: Optional[int] = None
    exact: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"mean": self.mean, "std_error": self.std_error, "n_samples": self.n_samples, "seed": self.seed}
        if self.exact is not None:
            d["exact"] = self.exact
        return d


@dataclass
class IdentityReport:
    identity: str
    process: str
    n: int
    lhs: MomentEstimate
    rhs: MomentEstimate
    diff_mean: float
    diff_se: float
    z_score: float
    threshold: float
    verdict: bool
    groups: dict = field(default_factory=dict)
    exact: bool = False
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "process": self.process,
            "n": self.n,
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "diff_mean": self.diff_mean,
            "diff_se": self.diff_se,
            "z_score": self.z_score if math.isfinite(self.z_score) else "inf",
            "threshold": self.threshold,
            "verdict": "pass" if self.verdict else "fail",
            "groups": self.groups,
            "exact": self.exact,
            "provenance": self.provenance,
        }


class RunningStats:
    """Mean, centred second moment and max modulus per column; mergeable."""

    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        k = len(self.names)
        self.n = 0
        self.mean = np.zeros(k)
        self.m2 = np.zeros(k)
        self.maxabs = np.zeros(k)

    @classmethod
    def from_rows(cls, names, rows: np.ndarray) -> "RunningStats":
        st = cls(names)
        st.n = rows.shape[0]
        if st.n:
            st.mean = rows.mean(axis=0)
            st.m2 = ((rows - st.mean) ** 2).sum(axis=0)
            st.maxabs = np.abs(rows).max(axis=0)
        return st

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2, self.maxabs = other.n, other.mean.copy(), other.m2.copy(), other.maxabs.copy()
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean = self.mean + d * (other.n / n)
        self.m2 = self.m2 + other.m2 + d * d * (self.n * other.n / n)
        self.maxabs = np.maximum(self.maxabs, other.maxabs)
        self.n = n
        return self

    def se(self) -> np.ndarray:
        if self.n < 2:
            return np.full(len(self.names), np.inf)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


# ---------------------------------------------------------------------------
# Identity descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    coef: float
    b: int
    label: str
    fn: Callable
    group: str = "main"


@dataclass
class Identity:
    name: str
    lhs: list
    rhs: list
    meta: dict = field(default_factory=dict)

    @property
    def pool(self) -> int:
        return max([t.b for t in self.lhs + self.rhs], default=0)

    @property
    def groups(self) -> list:
        seen = []
        for t in self.rhs:
            if t.group not in seen:
                seen.append(t.group)
        return seen


def _delta_term(coef, shifts, factors, label, group):
    shifts = tuple(shifts)
    factors = tuple(factors)
    return Term(coef, len(factors), label, lambda c: c.Delta(shifts, factors), group)


def _delta_group(j: int, npos: int) -> str:
    # every factor is shifted: a cyclic product of gradients
    return "delta_cyclic" if j == npos - 1 else "delta"


def _check_order(n: int, lo: int = 0, hi: int = MAX_ORDER):
    if not lo <= n <= hi:
        raise ValueError(f"order must lie in [{lo}, {hi}]")


def isometry_identity(u: PointProcess) -> Identity:
    return Identity(
        "isometry",
        [Term(1.0, 0, "delta(u)^2", lambda c: c.delta(u) ** 2)],
        [
            Term(1.0, 0, "int u^2", lambda c: c.powint(u, 2)),
            _delta_term(1.0, (0, 1), ((u, 1), (u, 1)), "int int D_s u_t D_t u_s", "delta_cyclic"),
        ],
    )


def third_identity(u: PointProcess) -> Identity:
    return Identity(
        "third",
        [Term(1.0, 0, "delta(u)^3", lambda c: c.delta(u) ** 3)],
        [
            Term(1.0, 0, "int u^3", lambda c: c.powint(u, 3)),
            Term(3.0, 0, "delta(u) int u^2", lambda c: c.delta(u) * c.powint(u, 2)),
            _delta_term(3.0, (0, 1), ((u, 1), (u, 2)), "Delta^2(u u^2)", "delta_cyclic"),
            _delta_term(1.0, (0, 1, 2), ((u, 1), (u, 1), (u, 1)), "Delta^3(u u u)", "delta_cyclic"),
        ],
    )


def _l22_factor_fn(u, F, a: int, powers: tuple):
    A = frozenset(range(a))

    def fn(c):
        val = c.F(F, A)
        for p, k in enumerate(powers):
            val = val * c.u(u, p, A - {p}) ** k
        return val

    return fn


def l22_identity(u: PointProcess, F: RandomFunctional, n: int) -> Identity:
    """``E[F delta(u)^n]`` against the expansion with coefficients ``C_{L,b}``."""
    _check_order(n, 1)
    merged: dict = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            for L in compositions(n - b, a):
                C = coeff_C(L, b)
                if C:
                    powers = tuple(1 + x for x in L) + (1,) * (b - a)
                    key = (a, powers)
                    merged[key] = merged.get(key, 0) + (-1) ** (b - a) * C
    rhs = [
        Term(float(coef), len(powers), f"a={a} powers={powers}", _l22_factor_fn(u, F, a, powers))
        for (a, powers), coef in merged.items()
        if coef
    ]
    return Identity("l22", [Term(1.0, 0, "F delta(u)^n", lambda c: c.F(F) * c.delta(u) ** n)], rhs, {"n": n})


FORMS = ("corrected", "printed")


def _shift_sets(a: int, form: str):
    """Shift sets attached to a term with ``a`` shifted factors besides point 0.

    ``corrected``: every ``{0} union W`` with ``W`` a subset of ``{1..a}``.
    ``printed``: the prefix ``{0..j}`` with multiplicity ``C(a, j)``, which
    treats the ``a`` factors as interchangeable; that is only valid when the
    coefficient is symmetric in the composition.
    """
    if form == "corrected":
        for r in range(a + 1):
            for W in itertools.combinations(range(1, a + 1), r):
                yield (0,) + W, 1
    elif form == "printed":
        for jj in range(a + 1):
            yield tuple(range(jj + 1)), math.comb(a, jj)
    else:
        raise ValueError(f"unknown form {form!r}; choose from {FORMS}")


def _canonical_shape(shifts, powers, fixed_first: bool):
    """Relabel integration points: shifted first, then unshifted, powers sorted.

    The points are i.i.d., so relabelling preserves the expectation of a
    term; it lets equal terms merge.  With ``fixed_first`` point 0 keeps its
    place (it carries a different process).
    """
    start = 1 if fixed_first else 0
    head = [powers[p] for p in range(start, len(powers)) if p in shifts]
    tail = [powers[p] for p in range(start, len(powers)) if p not in shifts]
    lead = (powers[0],) if fixed_first else ()
    j = len(head) + len(lead) - 1
    return j, lead + tuple(sorted(head)) + tuple(sorted(tail))


def _recursive_delta_terms(n: int, form: str = "corrected"):
    """Coefficients of the Delta-terms of the recursive identity, merged by shape.

    Keys are ``(j, powers)``: shifts at points ``0..j`` and factor powers at
    points ``0..b``.  The factor at point 0 has power ``1 + l0``.
    """
    merged: dict = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            for l0 in range(n - b + 1):
                for L in compositions(n - b - l0, a):
                    C = (-1) ** (b - a) * math.comb(n, l0) * coeff_C(L, b)
                    if not C:
                        continue
                    powers = (1 + l0,) + tuple(1 + x for x in L) + (1,) * (b - a)
                    for shifts, mult in _shift_sets(a, form):
                        key = _canonical_shape(set(shifts), powers, fixed_first=False)
                        merged[key] = merged.get(key, 0) + mult * C
    return {k: v for k, v in merged.items() if v}


def p01_identity(u: PointProcess, n: int, form: str = "corrected") -> Identity:
    """``E[delta(u)^{n+1}]`` against its recursive expansion."""
    _check_order(n, 1)
    rhs = [
        Term(float(math.comb(n, k)), 0, f"delta^{k} int u^{n - k + 1}", (lambda k: lambda c: c.delta(u) ** k * c.powint(u, n - k + 1))(k))
        for k in range(n)
    ]
    for (j, powers), coef in _recursive_delta_terms(n, form).items():
        rhs.append(
            _delta_term(
                float(coef), range(j + 1), [(u, k) for k in powers], f"j={j} powers={powers}", _delta_group(j, len(powers))
            )
        )
    return Identity("p01", [Term(1.0, 0, "delta(u)^(n+1)", lambda c: c.delta(u) ** (n + 1))], rhs, {"n": n, "form": form})


def c1_identity(u: PointProcess, n: int, powers_int: dict, form: str = "corrected") -> Identity:
    """Recursive expansion when ``int u^k`` is the constant ``powers_int[k]``.

    Integrating out an unshifted factor replaces it by the deterministic
    ``int u^{power}``, since every gradient of that integral vanishes.
    """
    _check_order(n, 1)
    rhs = [
        Term(
            float(math.comb(n, k)) * powers_int[n - k + 1],
            0,
            f"I_{n - k + 1} delta^{k}",
            (lambda k: lambda c: c.delta(u) ** k)(k),
        )
        for k in range(n)
    ]
    merged: dict = {}
    for (j, powers), coef in _recursive_delta_terms(n, form).items():
        head = powers[: j + 1]
        factor = coef * math.prod(powers_int[k] for k in powers[j + 1 :])
        merged[(j, head)] = merged.get((j, head), 0.0) + factor
    for (j, head), coef in merged.items():
        if coef:
            rhs.append(_delta_term(coef, range(j + 1), [(u, k) for k in head], f"j={j} powers={head}", "delta_cyclic"))
    return Identity("c1", [Term(1.0, 0, "delta(u)^(n+1)", lambda c: c.delta(u) ** (n + 1))], rhs, {"n": n, "form": form})


def pr1_identity(u: PointProcess, v: PointProcess, k: int, form: str = "corrected") -> Identity:
    """``E int v_s delta(eps^+_s u)^k ds`` against ``E[delta(u)^k int v]`` plus Delta-terms."""
    _check_order(k, 0, 3)
    merged: dict = {}
    for a in range(k + 1):
        for b in range(a, k + 1):
            for L in compositions(k - b, a):
                C = (-1) ** (b - a) * coeff_C(L, b)
                if not C:
                    continue
                powers = (1,) + tuple(1 + x for x in L) + (1,) * (b - a)
                for shifts, mult in _shift_sets(a, form):
                    key = _canonical_shape(set(shifts), powers, fixed_first=True)
                    merged[key] = merged.get(key, 0) + mult * C
    rhs = [Term(1.0, 0, "delta(u)^k int v", lambda c: c.delta(u) ** k * c.powint(v, 1))]
    for (j, powers), coef in merged.items():
        if coef:
            factors = [(v, 1)] + [(u, p) for p in powers[1:]]
            rhs.append(
                _delta_term(float(coef), range(j + 1), factors, f"j={j} powers=v,{powers[1:]}", _delta_group(j, len(factors)))
            )
    lhs = [Term(1.0, 1, "int v_s delta(eps_s u)^k", lambda c: c.u(v, 0) * c.delta(u, {0}) ** k)]
    return Identity("pr1", lhs, rhs, {"k": k, "form": form})


# ---------------------------------------------------------------------------
# Row evaluation
# ---------------------------------------------------------------------------


def evaluate_rows(identity: Identity, ctx: BatchContext, mass: float):
    """Columns ``lhs, rhs, diff`` and one per right-hand group, shape ``(M, 3 + G)``."""
    groups = identity.groups
    lhs = np.zeros(ctx.M)
    rhs = np.zeros(ctx.M)
    parts = {g: np.zeros(ctx.M) for g in groups}
    for t in identity.lhs:
        lhs = lhs + t.coef * mass**t.b * t.fn(ctx)
    for t in identity.rhs:
        val = t.coef * mass**t.b * t.fn(ctx)
        rhs = rhs + val
        parts[t.group] = parts[t.group] + val
    cols = [lhs, rhs, lhs - rhs] + [parts[g] for g in groups]
    out = np.stack(cols, axis=1)
    if not np.all(np.isfinite(out)):
        bad = int(np.nonzero(~np.all(np.isfinite(out), axis=1))[0][0])
        raise FloatingPointError(f"non-finite value in row {bad} of {identity.name}")
    return out, ["lhs", "rhs", "diff"] + groups


# ---------------------------------------------------------------------------
# Monte Carlo runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentitySpec:
    """Picklable description of an identity check on ``[0, 1]``."""

    identity: str
    process: str = "U2"
    n: int = 2
    functional: str = "one"
    v: str = "U1"
    rate: float = 1.0
    params: tuple = ()
    form: str = "corrected"

    def measure(self):
        return lebesgue([0.0, 1.0], self.rate)

    def build(self, powers_int: Optional[dict] = None) -> Identity:
        from .catalog import make_functional, make_process

        u = make_process(self.process, **dict(self.params))
        return build_identity(
            self.identity,
            u,
            self.n,
            F=make_functional(self.functional),
            v=make_process(self.v),
            powers_int=powers_int,
            form=self.form,
        )


IDENTITIES = ("isometry", "third", "l22", "p01", "c1", "pr1")
FIXED_ORDER = {"isometry": 2, "third": 3}


def build_identity(name: str, u, n: int = 2, F=None, v=None, powers_int=None, form: str = "corrected") -> Identity:
    if name == "isometry":
        return isometry_identity(u)
    if name == "third":
        return third_identity(u)
    if name == "l22":
        from .malliavin import ConstantFunctional

        return l22_identity(u, F if F is not None else ConstantFunctional(1.0), n)
    if name == "p01":
        return p01_identity(u, n, form)
    if name == "c1":
        if powers_int is None:
            raise ValueError("c1 needs the deterministic power integrals")
        return c1_identity(u, n, powers_int, form)
    if name == "pr1":
        from .catalog import U1

        return pr1_identity(u, v if v is not None else U1(), n, form)
    raise ValueError(f"unknown identity {name!r}; choose from {IDENTITIES}")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PPINV_WORKERS", "1")))
    except ValueError:
        return 1


def _chunk_bounds(samples: int, chunk: int):
    return [(i, min(chunk, samples - i * chunk)) for i in range((samples + chunk - 1) // chunk)]


def _identity_chunk(spec: IdentitySpec, powers_int, seed: int, index: int, rows: int):
    identity = spec.build(powers_int)
    m = spec.measure()
    gen = RngStream(seed, 0).spawn(index).generator()
    pts, mask = sample_batch(m, rows, gen)
    B = identity.pool
    s = m.sample_points(gen, rows * B).reshape(rows, B, m.dim) if B else np.empty((rows, 0, m.dim))
    ctx = BatchContext(pts, mask, s, m)
    cols, names = evaluate_rows(identity, ctx, m.total_mass)
    return RunningStats.from_rows(names, cols)


def deterministic_power_integrals(u: PointProcess, m, kmax: int, seed: int, configs: int = 100, tol: float = 1e-6) -> dict:
    """Check that ``int u^k dsigma`` does not depend on the configuration, ``k <= kmax``.

    Returns the common values; raises :class:`PreconditionError` if the spread
    over ``configs`` sampled configurations exceeds ``tol * sigma(X)``.
    """
    gen = RngStream(seed, 1).generator()
    pts, mask = sample_batch(m, configs, gen)
    out = {}
    for k in range(1, kmax + 1):
        vals = u.power_integral(pts, mask, k, m)
        spread = float(vals.max() - vals.min())
        if spread > tol * m.total_mass:
            raise PreconditionError(
                f"int u^{k} varies by {spread:.3g} across configurations; the process is outside this identity's scope"
            )
        exact = u.exact_power_integral(k, m)
        out[k] = float(exact) if exact is not None else float(vals.mean())
    return out


def _verdict(diff_mean: float, diff_se: float, threshold: float):
    if diff_se == 0:
        z = 0.0 if diff_mean == 0 else math.inf
    else:
        z = abs(diff_mean) / diff_se
    return z, z <= threshold


def run_identity(
    spec: IdentitySpec,
    samples: int,
    seed: int,
    chunk: int = 20000,
    workers: Optional[int] = None,
    threshold: float = 3.0,
    exact: str = "auto",
) -> IdentityReport:
    """Paired Monte Carlo check of one identity (exact path when available).

    Chunk ``i`` always uses stream ``spawn(i)`` of ``(seed, 0)`` and chunk
    statistics are merged in index order, so the result does not depend on
    the number of workers.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    if spec.identity in FIXED_ORDER:
        spec = replace(spec, n=FIXED_ORDER[spec.identity])
    _check_order(spec.n, 0 if spec.identity == "pr1" else 1, 3 if spec.identity == "pr1" else MAX_ORDER)
    from .catalog import make_functional, make_process

    u = make_process(spec.process, **dict(spec.params))
    m = spec.measure()
    if exact != "never":
        rep = exact_identity(spec.identity, u, spec.n, m, F=make_functional(spec.functional), v=make_process(spec.v))
        if rep is not None:
            rep.provenance.update({"spec": _spec_dict(spec)})
            return rep
        if exact == "always":
            raise PreconditionError("no exact path for this process")
    powers_int = None
    if spec.identity == "c1":
        powers_int = deterministic_power_integrals(u, m, spec.n + 1, seed)
    workers = default_workers() if workers is None else workers
    jobs = _chunk_bounds(samples, chunk)
    args = [(spec, powers_int, seed, i, rows) for i, rows in jobs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_identity_chunk_star, args))
    else:
        parts = [_identity_chunk(*a) for a in args]
    st = parts[0]
    for p in parts[1:]:
        st.merge(p)
    se = st.se()
    z, ok = _verdict(float(st.mean[2]), float(se[2]), threshold)
    groups = {
        name: {"mean": float(st.mean[i]), "std_error": float(se[i]), "max_abs": float(st.maxabs[i])}
        for i, name in enumerate(st.names)
        if i >= 3
    }
    return IdentityReport(
        identity=spec.identity,
        process=spec.process,
        n=spec.n,
        lhs=MomentEstimate(float(st.mean[0]), float(se[0]), st.n, seed),
        rhs=MomentEstimate(float(st.mean[1]), float(se[1]), st.n, seed),
        diff_mean=float(st.mean[2]),
        diff_se=float(se[2]),
        z_score=z,
        threshold=threshold,
        verdict=ok,
        groups=groups,
        provenance={
            "generator": GENERATOR_ID,
            "seed": seed,
            "chunk": chunk,
            "chunks": len(jobs),
            "integration_points": "iid from normalised intensity",
            "spec": _spec_dict(spec),
            "power_integrals": {str(k): v for k, v in (powers_int or {}).items()},
        },
    )


def _identity_chunk_star(args):
    return _identity_chunk(*args)


def _spec_dict(spec: IdentitySpec) -> dict:
    return {
        "identity": spec.identity,
        "process": spec.process,
        "n": spec.n,
        "functional": spec.functional,
        "v": spec.v,
        "rate": spec.rate,
        "params": dict(spec.params),
        "form": spec.form,
    }


def mc_moment(F: RandomFunctional, m, n: int, samples: int, rng, chunk: int = 50000) -> MomentEstimate:
    """Monte Carlo estimate of ``E[F^n]`` under the Poisson law with intensity ``m``."""
    if samples < 2:
        raise ValueError("need at least two samples")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    st = RunningStats(["F^n"])
    for i, rows in _chunk_bounds(samples, chunk):
        gen = stream.spawn(i).generator()
        pts, mask = sample_batch(m, rows, gen)
        vals = np.asarray(F.values(pts, mask), dtype=float) ** n
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite functional value")
        st.merge(RunningStats.from_rows(["F^n"], vals[:, None]))
    return MomentEstimate(float(st.mean[0]), float(st.se()[0]), st.n, stream.seed)


# ---------------------------------------------------------------------------
# Exact paths
# ---------------------------------------------------------------------------


def touchard_recurrence_sequence(powers: Sequence, N: int) -> list:
    """Moments ``m_0..m_{N+1}`` of a compensated integral with ``int f^k = powers[k-2]``.

    ``m_0 = 1``, ``m_1 = 0`` and ``m_{n+1} = sum_{k<n} C(n, k) I_{n-k+1} m_k``.
    Exact when the inputs are rationals.
    """
    if N < 0:
        raise ValueError("N must be non-negative")
    powers = list(powers)
    if len(powers) < N:
        raise ValueError("need int f^k for k = 2..N+1")
    I = {k + 2: powers[k] for k in range(len(powers))}
    m = [1, 0]
    for n in range(1, N + 1):
        m.append(sum(math.comb(n, k) * I[n - k + 1] * m[k] for k in range(n)))
    return m[: N + 2]


def compensated_moment_partitions(I: dict, n: int):
    """``E[(int f d(omega - sigma))^n]`` as a sum over partitions without singletons."""
    total = 0
    for P in set_partitions(n):
        if all(len(B) >= 2 for B in P):
            total += math.prod(I[len(B)] for B in P)
    return total if n else 1


def _exact_report(name, u, n, lhs: Fraction, rhs: Fraction, extra: dict) -> IdentityReport:
    z, ok = (0.0, True) if lhs == rhs else (math.inf, False)
    return IdentityReport(
        identity=name,
        process=getattr(u, "name", str(u)),
        n=n,
        lhs=MomentEstimate(float(lhs), 0.0, 0, None, format_exact(lhs)),
        rhs=MomentEstimate(float(rhs), 0.0, 0, None, format_exact(rhs)),
        diff_mean=float(lhs - rhs),
        diff_se=0.0,
        z_score=z,
        threshold=0.0,
        verdict=ok,
        groups={},
        exact=True,
        provenance={"path": "exact rational", **extra},
    )


def exact_identity(name: str, u: PointProcess, n: int, m, F=None, v=None) -> Optional[IdentityReport]:
    """Rational evaluation for deterministic ``u`` with exact power integrals.

    For deterministic integrands every gradient vanishes, shifted factors equal
    unshifted ones and expectations of products of integrals factorise.  The
    left side is computed from the partition expansion of the moments and is
    independent of the recurrence and of the coefficients ``C``.  Returns
    None when no exact path exists.
    """
    n = FIXED_ORDER.get(name, n)
    if not getattr(u, "deterministic", False):
        return None
    if F is not None and not (getattr(F, "c", None) == 1.0):
        return None
    top = n + 2
    I = {}
    for k in range(1, top + 1):
        val = u.exact_power_integral(k, m)
        if val is None:
            return None
        I[k] = Fraction(val)
    mom = {k: Fraction(compensated_moment_partitions(I, k)) for k in range(0, n + 2)}
    rec = touchard_recurrence_sequence([I[k] for k in range(2, n + 2)], n)
    extra = {"power_integrals": {str(k): format_exact(I[k]) for k in I}}
    if name == "isometry":
        return _exact_report(name, u, 2, mom[2], I[2], extra)
    if name == "third":
        return _exact_report(name, u, 3, mom[3], I[3] + 3 * mom[1] * I[2], extra)
    if name == "l22":
        rhs = Fraction(0)
        for a in range(n + 1):
            for b in range(a, n + 1):
                for L in compositions(n - b, a):
                    C = coeff_C(L, b)
                    rhs += (-1) ** (b - a) * C * math.prod(I[1 + x] for x in L) * I[1] ** (b - a)
        return _exact_report(name, u, n, mom[n], rhs, extra)
    if name in ("p01", "c1"):
        rhs = sum(math.comb(n, k) * I[n - k + 1] * Fraction(rec[k]) for k in range(n))
        return _exact_report(name, u, n, mom[n + 1], Fraction(rhs), extra)
    if name == "pr1":
        if v is None or not getattr(v, "deterministic", False) or v.exact_power_integral(1, m) is None:
            return None
        V = Fraction(v.exact_power_integral(1, m))
        return _exact_report(name, u, n, V * mom[n], mom[n] * V, extra)
    return None


class ExactCellEngine:
    """Exact expectations for cell processes on ``[0, 1]``.

    The unit interval is split into ``cells`` equal cells.  Configurations are
    enumerated by their cell count vectors (truncated at ``nmax`` points per
    cell, with Poisson weights) and integration points by their cells (with
    weights proportional to cell mass).  Cell processes only see counts and
    cells, so one representative point per (cell, slot) suffices and every
    expectation in an identity becomes a finite weighted sum.
    """

    def __init__(self, cells: int = 2, rate: float = 1.0, nmax: int = 18):
        self.K = int(cells)
        self.rate = float(rate)
        self.nmax = int(nmax)
        self.edges = np.linspace(0.0, 1.0, self.K + 1)
        self.measure = lebesgue([0.0, 1.0], self.rate)
        self.cell_mass = self.rate * np.diff(self.edges)

    @property
    def truncation_error(self) -> float:
        """Upper bound on the neglected probability mass."""
        return float(np.sum(poisson.sf(self.nmax, self.cell_mass)))

    def batch(self, B: int):
        K, nmax = self.K, self.nmax
        counts = np.array(list(itertools.product(range(nmax + 1), repeat=K)), dtype=int)
        pmf = np.prod(poisson.pmf(counts, self.cell_mass[None, :]), axis=1)
        slots = nmax + B + 2
        width = np.diff(self.edges)
        N = K * nmax
        pts = np.full((len(counts), N, 1), np.nan)
        mask = np.zeros((len(counts), N), dtype=bool)
        for c in range(K):
            for i in range(nmax):
                col = c * nmax + i
                on = counts[:, c] > i
                pts[on, col, 0] = self.edges[c] + width[c] * (i + 1) / slots
                mask[on, col] = True
        cell_tuples = np.array(list(itertools.product(range(K), repeat=B)), dtype=int).reshape(K**B, B)
        prob = self.cell_mass / self.cell_mass.sum()
        tw = np.prod(prob[cell_tuples], axis=1) if B else np.ones(1)
        R, T = len(counts), len(cell_tuples)
        s = np.zeros((T, B, 1))
        for i in range(B):
            s[:, i, 0] = self.edges[cell_tuples[:, i]] + width[cell_tuples[:, i]] * (nmax + 1 + i) / slots
        pts = np.repeat(pts, T, axis=0)
        mask = np.repeat(mask, T, axis=0)
        s = np.tile(s, (R, 1, 1))
        w = np.repeat(pmf, T) * np.tile(tw, R)
        return pts, mask, s, w

    def evaluate(self, identity: Identity) -> dict:
        pts, mask, s, w = self.batch(identity.pool)
        ctx = BatchContext(pts, mask, s, self.measure)
        cols, names = evaluate_rows(identity, ctx, self.measure.total_mass)
        vals = w @ cols
        out = {name: float(vals[i]) for i, name in enumerate(names)}
        out["max_abs"] = {name: float(np.max(np.abs(cols[:, i]))) for i, name in enumerate(names) if i >= 3}
        out["truncation_error"] = self.truncation_error
        return out

    def expectation(self, fn: Callable, B: int = 0) -> float:
        """``E[fn(ctx)]`` for a row function of a :class:`BatchContext`."""
        pts, mask, s, w = self.batch(B)
        return float(w @ fn(BatchContext(pts, mask, s, self.measure)))
