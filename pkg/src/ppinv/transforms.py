"""Random transformations of Poisson configurations.

A transformation maps ``(omega, x)`` to a point; its pushforward moves every
point of ``omega``.  Three concrete maps are provided:

* ``halfswap``: on ``[0, T]``, swap the blocks ``[T/2, 3T/4)`` and
  ``[3T/4, T)`` when ``omega`` has an odd number of points in ``[0, T/2)``
  (predictable: the image of ``y`` depends only on points below ``y``);
* ``hull``: points strictly inside the convex hull of ``omega`` are shuffled by
  a measure-preserving map that depends only on the hull vertices, built from
  a Rosenblatt transport to the unit square and a torus shift;
* ``negmax``: ``x / max(omega)``, which pins the largest image point at 1 and
  therefore does not preserve the Poisson law (negative control).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .pointprocess import (
    Ball,
    Configuration,
    IntensityMeasure,
    Polygon,
    QuadratureSpec,
    add_points,
    as_generator,
    batch_from_configs,
    dx_over_x,
    lebesgue,
    sample_batch,
)


class Transformation:
    """``tau(omega, x)``, evaluated on batches.

    ``apply_batch(pts, mask, x)`` maps the query points ``x`` (shape
    ``(M, K, d)``) for the row configurations ``(pts, mask)``.
    """

    name = "transformation"
    deterministic = False

    def __init__(self, source: IntensityMeasure, target: Optional[IntensityMeasure] = None):
        self.source = source
        self.target = target if target is not None else source

    def apply_batch(self, pts, mask, x) -> np.ndarray:
        raise NotImplementedError

    def images(self, pts, mask) -> np.ndarray:
        """``tau(omega, x)`` for every point ``x`` of each row (padding kept as NaN)."""
        out = self.apply_batch(pts, mask, np.nan_to_num(pts))
        return np.where(mask[..., None], out, np.nan)

    def apply(self, omega: Configuration, x) -> np.ndarray:
        """Images of the query point(s) ``x``, in the shape of ``x``."""
        pts, mask = batch_from_configs([omega], dim=omega.dim)
        x = np.asarray(x, dtype=float)
        return self.apply_batch(pts, mask, x.reshape(1, -1, omega.dim))[0].reshape(x.shape)

    def __call__(self, omega, x):
        return self.apply(omega, x)

    def to_dict(self) -> dict:
        return {"name": self.name}

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class IdentityTransform(Transformation):
    name = "identity"
    deterministic = True

    def apply_batch(self, pts, mask, x):
        return np.array(np.broadcast_to(x, (max(pts.shape[0], x.shape[0]),) + x.shape[1:]))


def make_identity(source: Optional[IntensityMeasure] = None) -> IdentityTransform:
    return IdentityTransform(source if source is not None else lebesgue())


def pushforward(tau: Transformation, omega: Configuration) -> Configuration:
    """``{tau(omega, x) : x in omega}``; image collisions are errors."""
    if len(omega) == 0:
        return omega
    pts, mask = batch_from_configs([omega], dim=omega.dim)
    img = tau.images(pts, mask)[0]
    if len(np.unique(img, axis=0)) < len(img):
        raise ValueError("pushforward produced colliding image points")
    dom = tau.target.domain
    if not np.all(dom.contains(img)):
        raise ValueError("pushforward produced a point outside the target domain")
    return Configuration(img, dim=omega.dim)


def pushforward_batch(tau: Transformation, pts, mask):
    """Batch pushforward: images in place of points, same mask."""
    return np.where(mask[..., None], tau.images(pts, mask), np.nan), mask


# ---------------------------------------------------------------------------
# Predictable example on an interval
# ---------------------------------------------------------------------------


class HalfSwap(Transformation):
    name = "halfswap"

    def __init__(self, T: float = 1.0, source: Optional[IntensityMeasure] = None):
        if not T > 0:
            raise ValueError("T must be positive")
        self.T = float(T)
        super().__init__(source if source is not None else lebesgue([0.0, self.T]))

    def parity(self, pts, mask) -> np.ndarray:
        """Whether the row has an odd number of points in ``[0, T/2)``."""
        if pts.shape[1] == 0:
            return np.zeros(pts.shape[0], dtype=bool)
        low = mask & (np.nan_to_num(pts[..., 0], nan=np.inf) < 0.5 * self.T)
        return (low.sum(axis=1) % 2).astype(bool)

    def apply_batch(self, pts, mask, x):
        T = self.T
        odd = self.parity(pts, mask)[:, None]
        y = x[..., 0]
        first = odd & (y >= 0.5 * T) & (y < 0.75 * T)
        second = odd & (y >= 0.75 * T) & (y < T)
        out = np.where(first, y + 0.25 * T, np.where(second, y - 0.25 * T, y))
        return out[..., None]

    def to_dict(self):
        return {"name": self.name, "T": self.T}


def make_halfswap(T: float = 1.0, rate: float = 1.0) -> HalfSwap:
    return HalfSwap(T, lebesgue([0.0, T], rate))


# ---------------------------------------------------------------------------
# Convex hull example
# ---------------------------------------------------------------------------


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_vertices(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain); collinear points dropped."""
    P = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(P) <= 2:
        return P
    pl = [(float(p[0]), float(p[1])) for p in P]
    lower: list = []
    for p in pl:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pl):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass(frozen=True)
class HullData:
    """Hull of a planar configuration: extreme points, polygon, area."""

    extreme_points: Configuration
    vertices: np.ndarray
    area: float

    @property
    def degenerate(self) -> bool:
        return len(self.vertices) < 3 or not self.area > 0

    @property
    def polygon(self) -> Optional[Polygon]:
        return None if self.degenerate else Polygon(self.vertices)

    def interior(self, x: np.ndarray) -> np.ndarray:
        """Strictly inside the open hull (always False for degenerate hulls)."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        if self.degenerate:
            return np.zeros(len(x), dtype=bool)
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cr = (w[:, 0] - v[:, 0])[None] * (x[:, 1:2] - v[None, :, 1]) - (w[:, 1] - v[:, 1])[None] * (
            x[:, 0:1] - v[None, :, 0]
        )
        return np.all(cr > 0, axis=1)

    def to_dict(self) -> dict:
        return {
            "extreme_points": self.extreme_points.points.tolist(),
            "vertices": self.vertices.tolist(),
            "area": self.area,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _polygon_area(v: np.ndarray) -> float:
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def hull_of(omega) -> HullData:
    pts = omega.points if isinstance(omega, Configuration) else np.asarray(omega, dtype=float).reshape(-1, 2)
    if pts.shape[-1] != 2:
        raise ValueError("convex hulls are planar")
    v = convex_hull_vertices(pts) if len(pts) else np.empty((0, 2))
    return HullData(Configuration(v, dim=2), v, _polygon_area(v))


def extreme_points_bruteforce(points: np.ndarray) -> np.ndarray:
    """Boolean mask: ``p`` is extreme iff it lies outside the closed hull of the others."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.zeros(len(P), dtype=bool)
    for i in range(len(P)):
        others = np.delete(P, i, axis=0)
        v = convex_hull_vertices(others) if len(others) else np.empty((0, 2))
        if len(v) < 3:
            # hull of the others is a point or a segment
            if len(v) == 0:
                out[i] = True
            elif len(v) == 1:
                out[i] = not np.all(P[i] == v[0])
            else:
                a, b = v[0], v[-1]
                on_line = _cross(a, b, P[i]) == 0
                within = np.all((P[i] >= np.minimum(a, b)) & (P[i] <= np.maximum(a, b)))
                out[i] = not (on_line and within)
            continue
        w = np.roll(v, -1, axis=0)
        cr = [(_cross(v[k], w[k], P[i])) for k in range(len(v))]
        out[i] = min(cr) < 0
    return out


class RosenblattMap:
    """Transport of the uniform law on a convex polygon to the unit square.

    ``R(x, y) = (F(x), (y - lower(x)) / L(x))`` with ``L`` the vertical chord
    length and ``F`` the normalised cumulative chord area.  ``shift`` defines
    the interior map ``R^{-1}((R + shift) mod 1)``.
    """

    def __init__(self, vertices, shift=(0.0, 0.0), tol: float = 1e-12, max_iter: int = 200):
        v = np.asarray(vertices, dtype=float)
        self.vertices = v
        self.shift = np.asarray(shift, dtype=float) % 1.0
        self.tol = tol
        self.max_iter = max_iter
        xs = np.unique(v[:, 0])
        if len(xs) < 2:
            raise ValueError("degenerate polygon")
        lo, hi = self._chord(xs)
        self.xs, self.lo, self.hi = xs, lo, hi
        self.L = hi - lo
        h = np.diff(xs)
        self.h = h
        seg = 0.5 * h * (self.L[:-1] + self.L[1:])
        self.A = np.concatenate([[0.0], np.cumsum(seg)])
        self.area = float(self.A[-1])

    def _chord(self, xb):
        """Lowest and highest polygon points on each vertical line ``x = xb``."""
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        a = np.where((v[:, 0] <= w[:, 0])[:, None], v, w)
        b = np.where((v[:, 0] <= w[:, 0])[:, None], w, v)
        X = xb[None, :]
        hit = (X >= a[:, 0:1]) & (X <= b[:, 0:1])
        dx = b[:, 0:1] - a[:, 0:1]
        with np.errstate(divide="ignore", invalid="ignore"):
            y = a[:, 1:2] + (X - a[:, 0:1]) * (b[:, 1:2] - a[:, 1:2]) / dx
        y = np.where(X == a[:, 0:1], a[:, 1:2], np.where(X == b[:, 0:1], b[:, 1:2], y))
        vert = dx == 0
        ylo = np.where(vert, np.minimum(a[:, 1:2], b[:, 1:2]), y)
        yhi = np.where(vert, np.maximum(a[:, 1:2], b[:, 1:2]), y)
        lo = np.min(np.where(hit, ylo, np.inf), axis=0)
        hi = np.max(np.where(hit, yhi, -np.inf), axis=0)
        return lo, hi

    def _segment(self, x):
        return np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)

    def _cum_area(self, i, t):
        dL = self.L[i + 1] - self.L[i]
        return self.A[i] + self.L[i] * t + dL * t * t / (2 * self.h[i])

    def _lower_len(self, i, t):
        f = t / self.h[i]
        return self.lo[i] + f * (self.lo[i + 1] - self.lo[i]), self.L[i] + f * (self.L[i + 1] - self.L[i])

    def forward(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        i = self._segment(p[:, 0])
        t = p[:, 0] - self.xs[i]
        lo, L = self._lower_len(i, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(L > 0, (p[:, 1] - lo) / L, 0.5)
        return np.stack([self._cum_area(i, t) / self.area, v], axis=-1)

    def _inverse_x(self, a: np.ndarray) -> np.ndarray:
        target = np.clip(a, 0.0, 1.0) * self.area
        i = np.clip(np.searchsorted(self.A, target, side="right") - 1, 0, len(self.xs) - 2)
        r = target - self.A[i]
        c2 = (self.L[i + 1] - self.L[i]) / (2 * self.h[i])
        disc = np.maximum(self.L[i] ** 2 + 4 * c2 * r, 0.0)
        den = self.L[i] + np.sqrt(disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(den > 0, 2 * r / den, 0.0)
        t = np.clip(t, 0.0, self.h[i])
        bad = ~np.isfinite(t) | (np.abs(self._cum_area(i, t) - target) > self.tol * max(self.area, 1.0))
        if np.any(bad):
            t[bad] = self._bisect(i[bad], target[bad])
        return self.xs[i] + t

    def _bisect(self, i, target):
        lo = np.zeros(len(i))
        hi = self.h[i].copy()
        for _ in range(self.max_iter):
            mid = 0.5 * (lo + hi)
            below = self._cum_area(i, mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= self.tol * max(self.h.max(), 1.0)):
                break
        t = 0.5 * (lo + hi)
        if np.any(np.abs(self._cum_area(i, t) - target) > 1e3 * self.tol * max(self.area, 1.0)):
            raise ArithmeticError("inverse CDF did not converge")
        return t

    def inverse(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        x = self._inverse_x(uv[:, 0])
        i = self._segment(x)
        lo, L = self._lower_len(i, x - self.xs[i])
        return np.stack([x, lo + uv[:, 1] * L], axis=-1)

    def shuffle(self, p: np.ndarray) -> np.ndarray:
        """``R^{-1}((R(p) + shift) mod 1)``."""
        if not np.any(self.shift):
            return np.asarray(p, dtype=float).reshape(-1, 2).copy()
        return self.inverse((self.forward(p) + self.shift) % 1.0)


class HullTransform(Transformation):
    """Identity outside the open hull; Rosenblatt torus shuffle inside."""

    name = "hull"

    def __init__(self, shift=(0.5, 0.5), source: Optional[IntensityMeasure] = None):
        self.shift = tuple(float(s) for s in shift)
        super().__init__(source if source is not None else lebesgue("unit_disk"))
        self._maps: dict = {}

    def rosenblatt(self, hull: HullData) -> RosenblattMap:
        # the map is a pure function of the vertex list; cache a bounded number
        key = hull.vertices.tobytes()
        rm = self._maps.get(key)
        if rm is None:
            if len(self._maps) > 4096:
                self._maps.clear()
            rm = self._maps[key] = RosenblattMap(hull.vertices, self.shift)
        return rm

    def hull_map(self, hull: HullData, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        out = x.copy()
        inside = hull.interior(x)
        if inside.any():
            out[inside] = self.rosenblatt(hull).shuffle(x[inside])
        return out

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_maps"] = {}
        return state

    def apply_batch(self, pts, mask, x):
        M = max(pts.shape[0], x.shape[0])
        xb = np.broadcast_to(x, (M,) + x.shape[1:])
        out = np.array(xb, dtype=float)
        for r in range(M):
            hull = hull_of(pts[r][mask[r]])
            if not hull.degenerate:
                out[r] = self.hull_map(hull, xb[r])
        return out

    def to_dict(self):
        return {"name": self.name, "shift": list(self.shift)}


def make_hull_transform(shift=(0.5, 0.5), rate: float = 1.0) -> HullTransform:
    return HullTransform(shift, lebesgue("unit_disk", rate))


# ---------------------------------------------------------------------------
# Negative control
# ---------------------------------------------------------------------------


class NegMax(Transformation):
    """``x / max(omega)`` (first coordinate); identity on the empty configuration."""

    name = "negmax"

    def apply_batch(self, pts, mask, x):
        if pts.shape[1] == 0:
            return np.array(x, dtype=float)
        mx = np.max(np.where(mask, pts[..., 0], -np.inf), axis=1)
        scale = np.where(np.isfinite(mx), mx, 1.0)[:, None, None]
        return x / scale

    def to_dict(self):
        return {"name": self.name, "a": float(self.source.domain.lo[0])}


def make_negative_control(a: float = 0.01) -> NegMax:
    return NegMax(dx_over_x(a, 1.0))


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def gradient_images(tau: Transformation, pts, mask, t: np.ndarray) -> np.ndarray:
    """``D_{t_i} tau(omega, t_j)`` for all ``i, j``: shape ``(M, k, k, d)``."""
    base = tau.apply_batch(pts, mask, t)
    k = t.shape[1]
    out = np.empty((t.shape[0], k) + t.shape[1:])
    for i in range(k):
        p2, m2 = add_points(pts, mask, t[:, i : i + 1, :])
        out[:, i] = tau.apply_batch(p2, m2, t) - base
    return out


def cyclic_check(tau: Transformation, k: int, trials: int, rng, measure: Optional[IntensityMeasure] = None, chunk: int = 2000):
    """Search for ``(omega, t_1..t_k)`` with every ``D_{t_i} tau(omega, t_{i+1})`` non-zero.

    A factor is zero when the two images are exactly equal.  Returns the
    first violating tuple as a dict, or None.
    """
    if not 1 <= k <= 5:
        raise ValueError("need 1 <= k <= 5")
    m = measure if measure is not None else tau.source
    gen = as_generator(rng)
    done = 0
    while done < trials:
        rows = min(chunk, trials - done)
        pts, mask = sample_batch(m, rows, gen)
        t = m.sample_points(gen, rows * k).reshape(rows, k, m.dim)
        D = gradient_images(tau, pts, mask, t)
        nonzero = np.ones(rows, dtype=bool)
        for i in range(k):
            nonzero &= np.any(D[:, i, (i + 1) % k] != 0, axis=-1)
        hit = np.nonzero(nonzero)[0]
        if hit.size:
            r = int(hit[0])
            return {
                "trial": done + r,
                "omega": pts[r][mask[r]].tolist(),
                "t": t[r].tolist(),
                "factors": [D[r, i, (i + 1) % k].tolist() for i in range(k)],
            }
        done += rows
    return None


def intensity_preservation_check(
    tau: Transformation,
    omega: Configuration,
    test_functions: Sequence[Callable],
    tolerance: float = 1e-3,
    quad: Optional[QuadratureSpec] = None,
) -> dict:
    """Compare ``int h(tau(omega, x)) sigma(dx)`` with ``int h dmu`` for each ``h``.

    The error is measured relative to ``int |h| dmu``.  Returns per-function
    errors and an overall verdict.
    """
    src, tgt = tau.source, tau.target
    qs = src.quadrature(quad) if quad is not None else src.quadrature()
    qt = tgt.quadrature(quad) if quad is not None else tgt.quadrature()
    pts, mask = batch_from_configs([omega], dim=omega.dim)
    img = tau.apply_batch(pts, mask, qs.nodes[None])[0]
    errors = []
    for h in test_functions:
        lhs = float(np.dot(qs.weights, h(img)))
        target = float(np.dot(qt.weights, h(qt.nodes)))
        scale = float(np.dot(qt.weights, np.abs(h(qt.nodes))))
        errors.append({"lhs": lhs, "rhs": target, "rel_error": abs(lhs - target) / max(scale, 1e-300)})
    ok = all(e["rel_error"] < tolerance for e in errors)
    return {"pass": ok, "errors": errors, "tolerance": tolerance, "nodes": qs.n_nodes}


def disk_check_quadrature() -> QuadratureSpec:
    """Fine polar rule used to check intensity preservation on the disk."""
    return QuadratureSpec("gauss", panels=200, order=4, angular=2048)


def monomials(deg: int = 3):
    """Coordinate monomials ``x^i y^j`` with ``1 <= i + j <= deg``."""
    out = []
    for tot in range(1, deg + 1):
        for i in range(tot + 1):
            j = tot - i
            out.append(lambda z, i=i, j=j: z[..., 0] ** i * z[..., 1] ** j)
    return out
