"""Named processes, functionals, transformations and measures.

Processes on ``[0, 1]`` with Lebesgue intensity of rate ``lam``:

``U1``  deterministic ``g(t) = 1 + t``;
``U2``  anticipating ``g(t) (1 + min(omega(X), K))``;
``U3``  predictable ``g(t) min(omega([0, t)), 1)``;
``U4``  ``h(tau(omega, t))`` with ``tau`` a registered transformation and
        ``h(y) = 1 + y`` (default ``tau = halfswap``);
``IND`` deterministic indicator ``1_[0, w)``.

Every class here is importable by name so that processes can be rebuilt in
worker processes.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional

import numpy as np

from .malliavin import ConstantFunctional, CountFunctional, PointProcess, RandomFunctional
from .pointprocess import Box, ConstantDensity, IntensityMeasure, dx_over_x, lebesgue, measure_from_spec
from .transforms import HalfSwap, make_halfswap, make_hull_transform, make_identity, make_negative_control


def _exact_rate(measure) -> Optional[Fraction]:
    """Exact rate of a Lebesgue measure on ``[0, 1]``, else None."""
    if not isinstance(measure, IntensityMeasure) or not isinstance(measure.density, ConstantDensity):
        return None
    dom = measure.domain
    if not isinstance(dom, Box) or dom.dim != 1 or dom.lo[0] != 0.0 or dom.hi[0] != 1.0:
        return None
    return Fraction(str(measure.density.rate))


def g_power_integral(k: int, lower: Fraction | float = 0) -> Fraction | float:
    """``int_lower^1 (1 + t)^k dt``."""
    if isinstance(lower, Fraction) or lower == 0:
        lower = Fraction(lower)
        return (Fraction(2) ** (k + 1) - (1 + lower) ** (k + 1)) / (k + 1)
    return (2.0 ** (k + 1) - (1.0 + lower) ** (k + 1)) / (k + 1)


class U1(PointProcess):
    name = "U1"
    deterministic = True
    bound = 2.0

    def values(self, pts, mask, t):
        v = 1.0 + t[..., 0]
        return np.broadcast_to(v, (max(pts.shape[0], t.shape[0]), t.shape[1]))

    def leave_one_out(self, pts, mask, ncols=None):
        ncols = pts.shape[1] if ncols is None else ncols
        return np.where(mask[:, :ncols], 1.0 + np.nan_to_num(pts[:, :ncols, 0]), 0.0)

    def power_integral(self, pts, mask, k, measure):
        lam = _exact_rate(measure)
        if lam is None:
            return super().power_integral(pts, mask, k, measure)
        return np.full(pts.shape[0], float(lam * g_power_integral(k)))

    def exact_power_integral(self, k, measure):
        lam = _exact_rate(measure)
        return None if lam is None else lam * g_power_integral(k)


class Indicator(PointProcess):
    """Deterministic ``1_[0, w)`` on ``[0, 1]``."""

    deterministic = True
    bound = 1.0

    def __init__(self, width: float = 0.5):
        self.width = float(width)
        self.name = f"IND({self.width:g})"

    def values(self, pts, mask, t):
        v = (t[..., 0] < self.width).astype(float)
        return np.broadcast_to(v, (max(pts.shape[0], t.shape[0]), t.shape[1]))

    def leave_one_out(self, pts, mask, ncols=None):
        ncols = pts.shape[1] if ncols is None else ncols
        return np.where(mask[:, :ncols], (np.nan_to_num(pts[:, :ncols, 0], nan=np.inf) < self.width), 0.0)

    def power_integral(self, pts, mask, k, measure):
        lam = _exact_rate(measure)
        if lam is None:
            return super().power_integral(pts, mask, k, measure)
        return np.full(pts.shape[0], float(lam) * self.width)

    def exact_power_integral(self, k, measure):
        lam = _exact_rate(measure)
        return None if lam is None else lam * Fraction(str(self.width))


class U2(PointProcess):
    """Anticipating: ``(1 + t)(1 + min(omega(X), K))``."""

    name = "U2"

    def __init__(self, K: int = 3):
        self.K = int(K)
        self.bound = 2.0 * (1 + self.K)

    def _level(self, n):
        return 1.0 + np.minimum(n, self.K)

    def values(self, pts, mask, t):
        lv = self._level(mask.sum(axis=1))[:, None]
        return lv * (1.0 + t[..., 0])

    def leave_one_out(self, pts, mask, ncols=None):
        ncols = pts.shape[1] if ncols is None else ncols
        lv = self._level(mask.sum(axis=1) - 1)[:, None]
        return np.where(mask[:, :ncols], lv * (1.0 + np.nan_to_num(pts[:, :ncols, 0])), 0.0)

    def power_integral(self, pts, mask, k, measure):
        lam = _exact_rate(measure)
        if lam is None:
            return super().power_integral(pts, mask, k, measure)
        return self._level(mask.sum(axis=1)) ** k * float(lam * g_power_integral(k))


class U3(PointProcess):
    """Predictable: ``(1 + t) min(omega([0, t)), 1)``, i.e. ``(1 + t) 1{t > min omega}``."""

    name = "U3"
    bound = 2.0

    @staticmethod
    def _first(pts, mask):
        if pts.shape[1] == 0:
            return np.full(pts.shape[0], np.inf)
        return np.min(np.where(mask, pts[..., 0], np.inf), axis=1)

    def values(self, pts, mask, t):
        first = self._first(pts, mask)[:, None]
        return np.where(t[..., 0] > first, 1.0 + t[..., 0], 0.0)

    def leave_one_out(self, pts, mask, ncols=None):
        ncols = pts.shape[1] if ncols is None else ncols
        x = np.nan_to_num(pts[:, :ncols, 0])
        first = self._first(pts, mask)[:, None]
        # some other point lies strictly below x iff x is not the minimum
        return np.where(mask[:, :ncols] & (x > first), 1.0 + x, 0.0)

    def power_integral(self, pts, mask, k, measure):
        lam = _exact_rate(measure)
        if lam is None:
            return super().power_integral(pts, mask, k, measure)
        first = self._first(pts, mask)
        lo = np.clip(np.where(np.isfinite(first), first, 1.0), 0.0, 1.0)
        return float(lam) * (2.0 ** (k + 1) - (1.0 + lo) ** (k + 1)) / (k + 1)


class Affine:
    """``h(y) = a + b y`` on the first coordinate (picklable test function)."""

    def __init__(self, a: float = 1.0, b: float = 1.0):
        self.a, self.b = float(a), float(b)

    def __call__(self, y):
        return self.a + self.b * np.asarray(y)[..., 0]


class ComposedProcess(PointProcess):
    """``u_t(omega) = h(tau(omega, t))``."""

    def __init__(self, tau, h=None, name: str = "U4"):
        self.tau = tau
        self.h = h if h is not None else Affine()
        self.name = name

    def values(self, pts, mask, t):
        return self.h(self.tau.apply_batch(pts, mask, t))

    def leave_one_out(self, pts, mask, ncols=None):
        if isinstance(self.tau, HalfSwap):
            # a point below T/2 is never moved, and removing a point at or
            # above T/2 leaves the parity of omega([0, T/2)) unchanged
            ncols = pts.shape[1] if ncols is None else ncols
            own = self.values(pts, mask, np.nan_to_num(pts[:, :ncols]))
            return np.where(mask[:, :ncols], own, 0.0)
        return super().leave_one_out(pts, mask, ncols)


def make_U4(transform: str = "halfswap", h=None, **params) -> ComposedProcess:
    return ComposedProcess(make_transform(transform, **params), h)


class BoundedFunctional(RandomFunctional):
    """``1 / (1 + omega(X))``."""

    name = "inv1p"
    bound = 1.0

    def values(self, pts, mask):
        return 1.0 / (1.0 + mask.sum(axis=1))


PROCESSES = {
    "U1": lambda **kw: U1(),
    "U2": lambda K=3, **kw: U2(int(K)),
    "U3": lambda **kw: U3(),
    "U4": lambda transform="halfswap", **kw: make_U4(transform),
    "IND": lambda width=0.5, **kw: Indicator(float(width)),
}

FUNCTIONALS = {
    "one": lambda **kw: ConstantFunctional(1.0),
    "count": lambda **kw: CountFunctional(),
    "inv1p": lambda **kw: BoundedFunctional(),
}

TRANSFORMS = {
    "identity": lambda rate=1.0, **kw: make_identity(lebesgue([0.0, 1.0], float(rate))),
    "halfswap": lambda T=1.0, rate=1.0, **kw: make_halfswap(float(T), float(rate)),
    "hull": lambda shift=(0.5, 0.5), rate=1.0, **kw: make_hull_transform(tuple(shift), float(rate)),
    "negmax": lambda a=0.01, **kw: make_negative_control(float(a)),
}

MEASURES = {
    "lebesgue": lambda domain=(0.0, 1.0), rate=1.0, **kw: lebesgue(domain, float(rate)),
    "dx_over_x": lambda domain=(0.01, 1.0), **kw: dx_over_x(float(domain[0]), float(domain[1])),
}


def _lookup(registry: dict, kind: str, name: str):
    if name not in registry:
        raise KeyError(f"unknown {kind} {name!r}; choose from {sorted(registry)}")
    return registry[name]


def make_process(name: str, **params) -> PointProcess:
    return _lookup(PROCESSES, "process", name)(**params)


def make_functional(name: str, **params) -> RandomFunctional:
    return _lookup(FUNCTIONALS, "functional", name)(**params)


def make_transform(name: str, **params):
    return _lookup(TRANSFORMS, "transformation", name)(**params)


def make_measure(name: str = "lebesgue", **params) -> IntensityMeasure:
    if name in MEASURES:
        return MEASURES[name](**params)
    return measure_from_spec({"measure": name, **params})
