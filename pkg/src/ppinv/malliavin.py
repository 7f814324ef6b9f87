"""Finite-difference Malliavin operators on Poisson configurations.

Two layers live here:

* pathwise operators on a single :class:`~ppinv.pointprocess.Configuration`
  (``eps_plus``, ``gradient_D``, ``gradient_iterated``, ``delta_multi``,
  ``skorohod``...), written for clarity and used by the exact oracles;
* :class:`BatchContext`, which evaluates the same objects row-wise on a batch
  of configurations together with per-row integration points.  All moment
  identities are written once against this context and run unchanged under
  Monte Carlo or exact enumeration.

Processes and functionals are evaluated on padded batches: ``pts`` has shape
``(M, N, d)``, ``mask`` shape ``(M, N)``, and process arguments ``t`` have
shape ``(M, K, d)`` or ``(1, K, d)``.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .pointprocess import (
    AtomicMeasure,
    Box,
    Configuration,
    add_points,
    batch_from_configs,
    count_in,
)

# ---------------------------------------------------------------------------
# Quadrature adapted to the configuration
# ---------------------------------------------------------------------------


def adapted_rule(measure, pts: np.ndarray, mask: np.ndarray, panels: int = 16, order: int = 8):
    """Per-row composite Gauss rule with the row's points as extra breakpoints.

    Catalog processes on an interval are piecewise polynomial in ``t`` with
    jumps only at configuration points and at dyadic panel edges, so this rule
    integrates their powers exactly.  Returns ``t`` of shape ``(M, K, d)`` and
    weights of shape ``(M, K)``.  Other domains fall back to the measure's
    fixed rule.
    """
    dom = getattr(measure, "domain", None)
    if not isinstance(dom, Box) or dom.dim != 1:
        q = measure.quadrature()
        return q.nodes[None, :, :], q.weights[None, :]
    lo, hi = float(dom.lo[0]), float(dom.hi[0])
    M = pts.shape[0]
    edges = np.broadcast_to(np.linspace(lo, hi, panels + 1), (M, panels + 1))
    bp = np.where(mask, np.clip(pts[..., 0], lo, hi), hi) if pts.shape[1] else np.empty((M, 0))
    allp = np.sort(np.concatenate([edges, bp], axis=1), axis=1)
    a, b = allp[:, :-1], allp[:, 1:]
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[..., None] + half[..., None] * x
    weights = half[..., None] * w
    nodes = nodes.reshape(M, -1)
    weights = weights.reshape(M, -1) * measure.density(nodes[..., None])
    return nodes[..., None], weights


# ---------------------------------------------------------------------------
# Processes and functionals
# ---------------------------------------------------------------------------


class PointProcess:
    """A map ``(omega, t) -> u_t(omega)``, evaluated on batches."""

    name = "process"
    bound = np.inf
    deterministic = False

    def values(self, pts, mask, t) -> np.ndarray:
        raise NotImplementedError

    def leave_one_out(self, pts, mask, ncols: Optional[int] = None) -> np.ndarray:
        """``u(omega \\ {x_j}, x_j)`` for the first ``ncols`` columns, shape ``(M, ncols)``."""
        ncols = pts.shape[1] if ncols is None else ncols
        out = np.zeros((pts.shape[0], ncols))
        for j in range(ncols):
            m2 = mask.copy()
            m2[:, j] = False
            out[:, j] = self.values(pts, m2, pts[:, j : j + 1, :])[:, 0]
        return np.where(mask[:, :ncols], out, 0.0)

    def power_integral(self, pts, mask, k: int, measure) -> np.ndarray:
        """``int u_t(omega)**k measure(dt)`` for each row."""
        t, w = adapted_rule(measure, pts, mask)
        v = self.values(pts, mask, t)
        return np.sum(w * v**k, axis=1)

    def exact_power_integral(self, k: int, measure) -> Optional[Fraction]:
        """Exact rational value of ``int u**k`` for deterministic processes."""
        return None

    def __call__(self, omega: Configuration, t) -> float:
        pts, mask = batch_from_configs([omega], dim=omega.dim)
        t = np.asarray(t, dtype=float).reshape(1, 1, omega.dim)
        return float(self.values(pts, mask, t)[0, 0])

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class RandomFunctional:
    """A map ``omega -> F(omega)``, evaluated on batches."""

    name = "functional"
    bound = np.inf

    def values(self, pts, mask) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, omega: Configuration) -> float:
        pts, mask = batch_from_configs([omega], dim=omega.dim)
        return float(self.values(pts, mask)[0])

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class ConstantFunctional(RandomFunctional):
    def __init__(self, c: float = 1.0):
        self.c = float(c)
        self.name = f"const({self.c:g})"
        self.bound = abs(self.c)

    def values(self, pts, mask):
        return np.full(pts.shape[0], self.c)


class CountFunctional(RandomFunctional):
    """``omega(A) - offset`` (``A`` the whole space when ``region`` is None)."""

    def __init__(self, region=None, offset: float = 0.0):
        self.region = region
        self.offset = float(offset)
        self.name = "count"

    def values(self, pts, mask):
        n = mask.sum(axis=1) if self.region is None else count_in(pts, mask, self.region)
        return n - self.offset


class CallableFunctional(RandomFunctional):
    """Wraps a plain function of a :class:`Configuration` (row loop)."""

    def __init__(self, fn: Callable[[Configuration], float], name: str = "callable"):
        self.fn = fn
        self.name = name

    def values(self, pts, mask):
        d = pts.shape[-1]
        return np.array([self.fn(Configuration(pts[i][mask[i]], dim=d)) for i in range(pts.shape[0])])


class DeterministicProcess(PointProcess):
    """``u_t(omega) = f(t)``; ``f`` maps ``(..., d)`` arrays to ``(...)``."""

    deterministic = True

    def __init__(self, f: Callable, name: str = "deterministic", exact_powers: Optional[Callable] = None):
        self.f = f
        self.name = name
        self._exact = exact_powers

    def values(self, pts, mask, t):
        v = np.asarray(self.f(t), dtype=float)
        return np.broadcast_to(v, (max(pts.shape[0], t.shape[0]), t.shape[1]))

    def leave_one_out(self, pts, mask, ncols=None):
        ncols = pts.shape[1] if ncols is None else ncols
        return np.where(mask[:, :ncols], self.f(np.nan_to_num(pts[:, :ncols])), 0.0)

    def exact_power_integral(self, k, measure):
        return None if self._exact is None else self._exact(k, measure)


class ShiftedProcess(PointProcess):
    """``eps^+_S u``: the process evaluated on ``omega`` union the fixed points ``S``."""

    def __init__(self, base: PointProcess, points):
        self.base = base
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.name = f"eps+({base.name})"

    def _shift(self, pts, mask):
        s = np.broadcast_to(self.points[None], (pts.shape[0],) + self.points.shape)
        return add_points(pts, mask, s)

    def values(self, pts, mask, t):
        p2, m2 = self._shift(pts, mask)
        return self.base.values(p2, m2, t)

    def leave_one_out(self, pts, mask, ncols=None):
        ncols = pts.shape[1] if ncols is None else ncols
        p2, m2 = self._shift(pts, mask)
        return self.base.leave_one_out(p2, m2, ncols)

    def power_integral(self, pts, mask, k, measure):
        p2, m2 = self._shift(pts, mask)
        return self.base.power_integral(p2, m2, k, measure)


class PowerProcess(PointProcess):
    """Pointwise power ``u**k``."""

    def __init__(self, base: PointProcess, k: int):
        self.base, self.k = base, k
        self.name = f"{base.name}^{k}"
        self.deterministic = base.deterministic

    def values(self, pts, mask, t):
        return self.base.values(pts, mask, t) ** self.k


# ---------------------------------------------------------------------------
# Lookup tables on a finite support
# ---------------------------------------------------------------------------


def _support_match(x: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Index of each point of ``x`` (``(..., d)``) in ``support``, or -1."""
    eq = np.all(x[..., None, :] == support, axis=-1)
    idx = np.argmax(eq, axis=-1)
    return np.where(eq.any(axis=-1), idx, -1)


def _subset_codes(pts, mask, support) -> np.ndarray:
    if pts.shape[1] == 0:
        return np.zeros(pts.shape[0], dtype=np.int64)
    idx = _support_match(pts, support)
    bits = np.where((idx >= 0) & mask, np.left_shift(1, np.maximum(idx, 0)), 0)
    # a point can appear twice in a batch only with a false mask, so OR == sum
    return np.bitwise_or.reduce(bits, axis=1)


class LookupTableProcess(PointProcess):
    """``u_t(omega) = table[code(omega), index(t)]`` on a finite support.

    ``code`` is the bitmask of support points present in ``omega``.  With
    ``triangular=True`` the value at the ``i``-th support point reads only the
    points of index ``< i``, so ``D_x u_y = 0`` whenever ``x`` is not below
    ``y``; every cyclic product of gradients then vanishes.
    """

    def __init__(self, support, table, triangular: bool = False, name: str = "lookup"):
        self.support = np.asarray(support, dtype=float).reshape(len(support), -1)
        self.table = np.asarray(table, dtype=float)
        S = len(self.support)
        if self.table.shape != (2**S, S):
            raise ValueError(f"table must have shape {(2**S, S)}")
        self.triangular = triangular
        self.below = np.array([(1 << i) - 1 for i in range(S)], dtype=np.int64)
        self.name = name
        self.bound = float(np.max(np.abs(self.table)))

    def values(self, pts, mask, t):
        code = _subset_codes(pts, mask, self.support)
        tidx = _support_match(t, self.support)
        code = np.broadcast_to(code[:, None], np.broadcast_shapes(code[:, None].shape, tidx.shape))
        if self.triangular:
            code = code & self.below[np.maximum(tidx, 0)]
        v = self.table[code, np.maximum(tidx, 0)]
        return np.where(tidx >= 0, v, 0.0)

    def __call__(self, omega: Configuration, t) -> float:
        # scalar fast path for the pathwise oracles; same result as values()
        index = self._index()
        ti = index.get(np.asarray(t, dtype=float).reshape(-1).tobytes(), -1)
        if ti < 0:
            return 0.0
        code = 0
        for x in omega.points:
            i = index.get(x.tobytes(), -1)
            if i >= 0:
                code |= 1 << i
        if self.triangular:
            code &= int(self.below[ti])
        return float(self.table[code, ti])

    def _index(self) -> dict:
        if getattr(self, "_index_cache", None) is None:
            self._index_cache = {x.tobytes(): i for i, x in enumerate(self.support)}
        return self._index_cache

    def to_dict(self):
        return {"support": self.support.tolist(), "table": self.table.tolist(), "triangular": self.triangular}


class LookupTableFunctional(RandomFunctional):
    def __init__(self, support, table, name="lookup"):
        self.support = np.asarray(support, dtype=float).reshape(len(support), -1)
        self.table = np.asarray(table, dtype=float)
        self.name = name

    def values(self, pts, mask):
        return self.table[_subset_codes(pts, mask, self.support)]


def random_lookup_process(gen: np.random.Generator, support, triangular: bool = False) -> LookupTableProcess:
    S = len(support)
    return LookupTableProcess(support, gen.uniform(-1.0, 1.0, (2**S, S)), triangular)


# ---------------------------------------------------------------------------
# Cell processes: depend on omega through cell counts and on t through its cell
# ---------------------------------------------------------------------------


class CellProcess(PointProcess):
    """``u_t(omega) = table[code, cell(t)]`` with ``code`` the capped cell counts.

    Used with :class:`ppinv.moments.ExactCellEngine`, under which every
    expectation in the moment identities is a finite weighted sum.  With
    ``predictable=True`` the value in cell ``c`` only sees counts in cells
    ``< c``.
    """

    def __init__(self, edges, table, cap: int = 3, predictable: bool = False, name: str = "cell"):
        self.edges = np.asarray(edges, dtype=float)
        self.K = len(self.edges) - 1
        self.cap = int(cap)
        self.table = np.asarray(table, dtype=float)
        if self.table.shape != ((self.cap + 1) ** self.K, self.K):
            raise ValueError("table shape does not match cells and cap")
        self.predictable = predictable
        self.name = name
        self.bound = float(np.max(np.abs(self.table)))
        self._radix = (self.cap + 1) ** np.arange(self.K)

    def cell_of(self, x):
        return np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.K - 1)

    def counts(self, pts, mask):
        if pts.shape[1] == 0:
            return np.zeros((pts.shape[0], self.K), dtype=np.int64)
        cells = self.cell_of(np.nan_to_num(pts[..., 0]))
        onehot = (cells[..., None] == np.arange(self.K)) & mask[..., None]
        return onehot.sum(axis=1)

    def codes(self, pts, mask):
        """Code per row and cell, shape ``(M, K)``."""
        capped = np.minimum(self.counts(pts, mask), self.cap) * self._radix
        if not self.predictable:
            return np.repeat(capped.sum(axis=1, keepdims=True), self.K, axis=1)
        cum = np.cumsum(capped, axis=1)
        return np.concatenate([np.zeros((len(cum), 1), dtype=cum.dtype), cum[:, :-1]], axis=1)

    def values(self, pts, mask, t):
        codes = self.codes(pts, mask)
        c = self.cell_of(t[..., 0])
        c = np.broadcast_to(c, (codes.shape[0], c.shape[1]))
        code = np.take_along_axis(codes, c, axis=1)
        return self.table[code, c]

    def power_integral(self, pts, mask, k, measure):
        rate = getattr(measure, "rate", None)
        if rate is None:
            return super().power_integral(pts, mask, k, measure)
        codes = self.codes(pts, mask)
        vals = self.table[codes, np.arange(self.K)[None, :]]
        return (vals**k) @ (rate * np.diff(self.edges))


class CellFunctional(RandomFunctional):
    def __init__(self, edges, table, cap: int = 3, name="cell"):
        self.proc = CellProcess(edges, np.zeros(((cap + 1) ** (len(edges) - 1), len(edges) - 1)), cap)
        self.table = np.asarray(table, dtype=float)
        self.name = name

    def values(self, pts, mask):
        return self.table[self.proc.codes(pts, mask)[:, 0]]


def random_cell_process(gen, edges, cap=3, predictable=False, scale=1.0) -> CellProcess:
    K = len(edges) - 1
    return CellProcess(edges, scale * gen.uniform(-1.0, 1.0, ((cap + 1) ** K, K)), cap, predictable)


# ---------------------------------------------------------------------------
# Pathwise operators on single configurations
# ---------------------------------------------------------------------------


def _as_point(x, dim):
    return np.atleast_1d(np.asarray(x, dtype=float)).reshape(dim)


def eps_plus(F: Callable[[Configuration], float], x, omega: Configuration) -> float:
    """``F(omega union {x})``; adding an existing point changes nothing."""
    return F(omega.with_point(_as_point(x, omega.dim)))


def gradient_D(F: Callable[[Configuration], float], x, omega: Configuration) -> float:
    """``D_x F(omega) = F(omega union {x}) - F(omega)``."""
    return eps_plus(F, x, omega) - F(omega)


def _check_distinct(points, what="points"):
    arr = np.asarray(points, dtype=float)
    if len(arr) and len(np.unique(arr.reshape(len(arr), -1), axis=0)) < len(arr):
        raise ValueError(f"{what} must be pairwise distinct")


def gradient_iterated(F: Callable[[Configuration], float], theta, omega: Configuration) -> float:
    """``D_Theta F = sum_{A subset Theta} (-1)^{|Theta \\ A|} F(omega union A)``."""
    theta = [_as_point(x, omega.dim) for x in theta]
    _check_distinct(theta, "points of Theta")
    total = 0.0
    k = len(theta)
    for r in range(k + 1):
        for A in itertools.combinations(range(k), r):
            total += (-1) ** (k - r) * F(omega.with_points([theta[i] for i in A]) if A else omega)
    return total


def _gradient_table(u_eval, p: int, allowed: Sequence[int], omega, s):
    """``D_Theta G_p`` for every ``Theta`` subset of ``allowed`` (by bitmask over ``allowed``)."""
    k = len(allowed)
    vals = {}
    for mask in range(1 << k):
        pts = [s[allowed[i]] for i in range(k) if mask >> i & 1]
        vals[mask] = u_eval(p, omega.with_points(pts) if pts else omega)
    # successive differences: a direction the value ignores gives an exact zero
    out = dict(vals)
    for i in range(k):
        for m in range(1 << k):
            if m >> i & 1:
                out[m] = out[m] - out[m ^ (1 << i)]
    return out


def delta_multi(
    u,
    s,
    j: int,
    omega: Configuration,
    powers: Optional[Sequence[int]] = None,
    shifts: Optional[Sequence[int]] = None,
    method: str = "enumerate",
    allow_self: bool = False,
) -> float:
    """``Delta_{s_0} ... Delta_{s_j} prod_p u_{s_p}^{powers[p]}`` at ``omega``.

    Each shift point ``s_i`` (``i`` in ``shifts``, by default ``0..j``) is
    assigned a non-empty set ``S_i`` of factor positions not containing ``i``;
    the factor at position ``p`` receives ``D_Theta_p`` with
    ``Theta_p = {s_i : p in S_i}``.

    ``u`` is a process, or one process per position.  ``method`` selects the
    literal enumeration over assignments (``"enumerate"``), a dynamic
    programme over covered shift points (``"dp"``) or the Moebius form
    ``sum_{V subset W} (-1)^{|W \\ V|} prod_p u(omega union V \\ {s_p}, s_p)``
    (``"mobius"``).  ``allow_self`` admits ``i in S_i`` and exists only to
    check that the oracles detect that mistake.
    """
    s = [_as_point(x, omega.dim) for x in s]
    n = len(s) - 1
    if n < 0:
        raise ValueError("need at least one point")
    if not 0 <= j <= n:
        raise ValueError("need 0 <= j <= n")
    _check_distinct(s, "points s")
    procs = list(u) if isinstance(u, (list, tuple)) else [u] * (n + 1)
    powers = [1] * (n + 1) if powers is None else list(powers)
    W = list(range(j + 1)) if shifts is None else sorted(shifts)

    cache = {}

    def u_eval(p, conf):
        key = (p, conf)
        if key not in cache:
            cache[key] = procs[p](conf, s[p]) ** powers[p]
        return cache[key]

    if method == "mobius":
        if allow_self:
            raise ValueError("the Moebius form has no self-assignment variant")
        total = 0.0
        for r in range(len(W) + 1):
            for V in itertools.combinations(W, r):
                prod = 1.0
                for p in range(n + 1):
                    pts = [s[i] for i in V if i != p]
                    prod *= u_eval(p, omega.with_points(pts) if pts else omega)
                total += (-1) ** (len(W) - r) * prod
        return total

    k = len(W)
    full = (1 << k) - 1
    tables = []
    for p in range(n + 1):
        allowed_idx = [i for i in range(k) if allow_self or W[i] != p]
        tab = _gradient_table(u_eval, p, [W[i] for i in allowed_idx], omega, s)
        # re-key by bitmask over W
        rek = {}
        for m, v in tab.items():
            bits = 0
            for b, wi in enumerate(allowed_idx):
                if m >> b & 1:
                    bits |= 1 << wi
            rek[bits] = v
        tables.append(rek)

    if method == "dp":
        state = {0: 1.0}
        for tab in tables:
            new = {}
            for c, val in state.items():
                for theta, dv in tab.items():
                    new[c | theta] = new.get(c | theta, 0.0) + val * dv
            state = new
        return state.get(full, 0.0)

    if method != "enumerate":
        raise ValueError(f"unknown method {method!r}")
    # literal enumeration: every tuple (Theta_0, ..., Theta_n) covering W,
    # equivalently every family of non-empty position sets S_i
    keys = [np.array(list(t.keys()), dtype=np.int64) for t in tables]
    vals = [np.array(list(t.values())) for t in tables]
    cover = np.zeros((), dtype=np.int64)
    prod = np.ones(())
    for kk, vv in zip(keys, vals):
        cover = np.bitwise_or.outer(cover, kk)
        prod = np.multiply.outer(prod, vv)
    return float(np.sum(prod[cover == full]))


def theta_assignments(n: int, j: int, allow_self: bool = False):
    """All assignments ``(S_0, ..., S_j)`` of non-empty position sets."""
    choices = []
    for i in range(j + 1):
        pos = [p for p in range(n + 1) if allow_self or p != i]
        subs = [frozenset(c) for r in range(1, len(pos) + 1) for c in itertools.combinations(pos, r)]
        choices.append(subs)
    return itertools.product(*choices)


def skorohod(u: PointProcess, omega: Configuration, m) -> float:
    """``delta(u) = sum_{t in omega} u(omega \\ {t}, t) - int u(omega, t) m(dt)``."""
    pts, mask = batch_from_configs([omega], dim=omega.dim)
    return float(u.leave_one_out(pts, mask).sum() - u.power_integral(pts, mask, 1, m)[0])


def compensated_integral(f: Callable, omega: Configuration, m) -> float:
    """``sum_{t in omega} f(t) - int f dm`` for a deterministic ``f``."""
    q = m.quadrature()
    atoms = float(np.sum(f(omega.points))) if len(omega) else 0.0
    return atoms - float(np.dot(q.weights, f(q.nodes)))


def commutation_check(u: PointProcess, t, omega: Configuration, m) -> tuple[float, float]:
    """``(eps^+_t delta(u), delta(eps^+_t u) + u_t)``, equal for ``t`` not in ``omega``."""
    t = _as_point(t, omega.dim)
    if t in omega:
        raise ValueError("t must not belong to omega")
    lhs = skorohod(u, omega.with_point(t), m)
    rhs = skorohod(ShiftedProcess(u, t), omega, m) + u(omega, t)
    return lhs, rhs


class SkorohodFunctional(RandomFunctional):
    """``omega -> delta(u)(omega)`` as a functional."""

    def __init__(self, u: PointProcess, m):
        self.u, self.m = u, m
        self.name = f"delta({u.name})"

    def values(self, pts, mask):
        return self.u.leave_one_out(pts, mask).sum(axis=1) - self.u.power_integral(pts, mask, 1, self.m)


# ---------------------------------------------------------------------------
# Batch context
# ---------------------------------------------------------------------------


class BatchContext:
    """Row-wise evaluation of shifted processes on a batch.

    Row ``r`` holds a configuration ``omega_r`` and integration points
    ``s_r[0], s_r[1], ...``.  Index sets ``A`` refer to those points:
    ``u(proc, p, A)`` is ``proc(omega_r union {s_r[i] : i in A}, s_r[p])``.
    Every evaluation is cached, so a formula may request the same shifted
    value many times at no extra cost.
    """

    def __init__(self, pts, mask, s, measure):
        self.pts, self.mask, self.s, self.measure = pts, mask, s, measure
        self.M = pts.shape[0]
        self.N = pts.shape[1]
        self._cfg = {}
        self._cache = {}

    def config(self, A=()):
        A = frozenset(A)
        if A not in self._cfg:
            idx = sorted(A)
            self._cfg[A] = add_points(self.pts, self.mask, self.s[:, idx, :]) if idx else (self.pts, self.mask)
        return self._cfg[A]

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def u(self, proc, p: int, A=()):
        A = frozenset(A)

        def go():
            pts, mask = self.config(A)
            return proc.values(pts, mask, self.s[:, p : p + 1, :])[:, 0]

        return self._memo(("u", id(proc), p, A), go)

    def F(self, func, A=()):
        A = frozenset(A)
        return self._memo(("F", id(func), A), lambda: func.values(*self.config(A)))

    def powint(self, proc, k: int, A=()):
        A = frozenset(A)
        return self._memo(("I", id(proc), k, A), lambda: proc.power_integral(*self.config(A), k, self.measure))

    def delta(self, proc, A=()):
        """``delta(eps^+_{s_A} u)`` evaluated at the row's configuration."""
        A = frozenset(A)

        def go():
            pts, mask = self.config(A)
            loo = proc.leave_one_out(pts, mask, self.N)
            return loo.sum(axis=1) - self.powint(proc, 1, A)

        return self._memo(("d", id(proc), A), go)

    def gradients(self, proc, p: int, power: int, allowed: tuple):
        """``D_Theta (u_{s_p}^power)`` for all ``Theta`` subset of ``allowed``.

        Computed by successive differences, so a direction that does not
        affect the value yields an exact floating-point zero.
        """

        def go():
            k = len(allowed)
            vals = [None] * (1 << k)
            for m in range(1 << k):
                A = [allowed[i] for i in range(k) if m >> i & 1]
                vals[m] = self.u(proc, p, A) ** power
            for i in range(k):
                bit = 1 << i
                for m in range(1 << k):
                    if m & bit:
                        vals[m] = vals[m] - vals[m ^ bit]
            return vals

        return self._memo(("g", id(proc), p, power, allowed), go)

    def Delta(self, shifts, factors):
        """``Delta_{s_W} prod_p f_p`` with ``factors[p] = (proc, power)`` at point ``p``."""
        W = tuple(sorted(shifts))
        k = len(W)
        full = (1 << k) - 1
        state = {0: np.ones(self.M)}
        for p, (proc, power) in enumerate(factors):
            allowed_idx = [i for i in range(k) if W[i] != p]
            grads = self.gradients(proc, p, power, tuple(W[i] for i in allowed_idx))
            new = {}
            for m, g in enumerate(grads):
                if not np.any(g):
                    continue
                bits = 0
                for b, wi in enumerate(allowed_idx):
                    if m >> b & 1:
                        bits |= 1 << wi
                for c, val in state.items():
                    key = c | bits
                    term = val * g
                    new[key] = new[key] + term if key in new else term
            state = new
        return state.get(full, np.zeros(self.M))
