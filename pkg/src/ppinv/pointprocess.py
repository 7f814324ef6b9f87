"""Configurations, intensity measures and Poisson sampling on compact windows.

A configuration is a finite set of distinct points; the Poisson measure with
intensity ``sigma`` is sampled by drawing a Poisson count and i.i.d. points
from the normalised density.  Monte Carlo code works on *batches*: arrays
``pts`` of shape ``(M, N, d)`` padded with NaN and a boolean ``mask`` of shape
``(M, N)`` marking occupied slots.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

GENERATOR_ID = "numpy.random.Philox(4x64-10)+SeedSequence"


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by ``(seed, stream_id)``.

    Philox is counter based, so distinct stream ids give independent
    sequences without any coordination between workers.  ``path`` allows a
    stream to be split further (``spawn``).
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.path):
            if not (0 <= int(v) < 2**64):
                raise ValueError("seeds and stream ids must be 64-bit unsigned integers")

    def spawn(self, i: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(i),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id), *self.path))
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------


class Region:
    """Compact region of R^d with a vectorised membership test."""

    dim: int

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class Box(Region):
    """Closed hyper-rectangle ``[lo_1, hi_1] x ... x [lo_d, hi_d]``."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d of equal length")
        if not np.all(self.hi > self.lo):
            raise ValueError("box must have positive side lengths")
        self.dim = self.lo.size
        if self.dim > 3:
            raise ValueError("only dimensions 1 to 3 are supported")

    @property
    def bbox(self):
        return self.lo, self.hi

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"


def Interval(lo: float, hi: float) -> Box:
    return Box([lo], [hi])


class Ball(Region):
    """Closed Euclidean ball."""

    def __init__(self, center: Sequence[float], radius: float):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.dim = self.center.size
        if self.dim > 3:
            raise ValueError("only dimensions 1 to 3 are supported")

    @property
    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum((x - self.center) ** 2, axis=-1) <= self.radius**2

    @property
    def volume(self):
        r, d = self.radius, self.dim
        return float(math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d)

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}

    def __repr__(self):
        return f"Ball({self.center.tolist()}, {self.radius})"


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


class Polygon(Region):
    """Closed convex polygon in the plane, vertices stored counter-clockwise."""

    def __init__(self, vertices: Sequence[Sequence[float]]):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("a polygon needs at least three planar vertices")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area2 == 0:
            raise ValueError("degenerate polygon")
        if area2 < 0:
            v = v[::-1]
        nxt = np.roll(v, -1, axis=0)
        nxt2 = np.roll(v, -2, axis=0)
        if np.any(_cross(v, nxt, nxt2) < 0):
            raise ValueError("polygon must be convex")
        self.vertices = v
        self.dim = 2

    @property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def contains(self, x, strict: bool = False):
        x = np.asarray(x, dtype=float)
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        ex = x[..., None, :]
        c = (b[:, 0] - a[:, 0]) * (ex[..., 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (ex[..., 0] - a[:, 0])
        return np.all(c > 0, axis=-1) if strict else np.all(c >= 0, axis=-1)

    @property
    def volume(self):
        v = self.vertices
        return float(0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    def to_dict(self):
        return {"type": "polygon", "vertices": self.vertices.tolist()}

    def __repr__(self):
        return f"Polygon({self.vertices.tolist()})"


def region_from_spec(spec) -> Region:
    """Build a region from a config value.

    ``[0, 1]`` is an interval, ``[[0, 1], [0, 2]]`` a box given per axis,
    ``"unit_disk"`` the unit disk, and dicts follow :meth:`Region.to_dict`.
    """
    if isinstance(spec, Region):
        return spec
    if isinstance(spec, str):
        if spec in ("unit_disk", "disk"):
            return Ball([0.0, 0.0], 1.0)
        if spec == "unit_square":
            return Box([0.0, 0.0], [1.0, 1.0])
        if spec == "unit_interval":
            return Interval(0.0, 1.0)
        raise ValueError(f"unknown domain {spec!r}")
    if isinstance(spec, dict):
        kind = spec.get("type")
        if kind == "box":
            return Box(spec["lo"], spec["hi"])
        if kind == "ball":
            return Ball(spec["center"], spec["radius"])
        if kind == "polygon":
            return Polygon(spec["vertices"])
        raise ValueError(f"unknown region type {kind!r}")
    arr = np.asarray(spec, dtype=float)
    if arr.shape == (2,):
        return Interval(arr[0], arr[1])
    if arr.ndim == 2 and arr.shape[1] == 2:
        return Box(arr[:, 0], arr[:, 1])
    raise ValueError(f"cannot interpret domain {spec!r}")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    """Nodes and weights; weights already include the density."""

    nodes: np.ndarray
    weights: np.ndarray
    scheme: str

    @property
    def n_nodes(self) -> int:
        return int(self.weights.size)

    def describe(self) -> dict:
        return {"scheme": self.scheme, "n_nodes": self.n_nodes}


def gauss_panels(lo: float, hi: float, panels: int, order: int, edges: Optional[np.ndarray] = None):
    """Composite Gauss-Legendre rule on ``[lo, hi]`` (nodes, weights)."""
    x, w = np.polynomial.legendre.leggauss(order)
    if edges is None:
        edges = np.linspace(lo, hi, panels + 1)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def midpoint_rule(lo: float, hi: float, n: int):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5), np.full(n, h)


def _box_rule(box: Box, scheme: str, per_axis: int, panels: int, order: int):
    axes = []
    for lo, hi in zip(box.lo, box.hi):
        if scheme == "midpoint":
            axes.append(midpoint_rule(lo, hi, per_axis))
        else:
            axes.append(gauss_panels(lo, hi, panels, order))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def _ball_rule(ball: Ball, scheme: str, radial_panels: int, order: int, angular: int):
    d, R, c = ball.dim, ball.radius, ball.center
    if scheme == "midpoint":
        r, wr = midpoint_rule(0.0, R, radial_panels * order)
    else:
        r, wr = gauss_panels(0.0, R, radial_panels, order)
    if d == 1:
        nodes, weights = gauss_panels(c[0] - R, c[0] + R, 2 * radial_panels, order)
        return nodes[:, None], weights
    th = 2 * np.pi * np.arange(angular) / angular
    wth = np.full(angular, 2 * np.pi / angular)
    if d == 2:
        rr, tt = np.meshgrid(r, th, indexing="ij")
        ww = np.outer(wr * r, wth)
        nodes = np.stack([c[0] + rr.ravel() * np.cos(tt.ravel()), c[1] + rr.ravel() * np.sin(tt.ravel())], axis=-1)
        return nodes, ww.ravel()
    mu, wmu = np.polynomial.legendre.leggauss(max(order, angular // 4))
    rr, mm, tt = np.meshgrid(r, mu, th, indexing="ij")
    ww = (wr * r**2)[:, None, None] * wmu[None, :, None] * wth[None, None, :]
    s = np.sqrt(1 - mm**2)
    nodes = np.stack([c[0] + rr * s * np.cos(tt), c[1] + rr * s * np.sin(tt), c[2] + rr * mm], axis=-1)
    return nodes.reshape(-1, 3), ww.ravel()


def _polygon_rule(poly: Polygon, order: int, subdiv: int):
    """Fan triangulation, each triangle split ``subdiv**2`` times, collapsed GL."""
    x, w = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (x + 1)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WW = np.outer(wu, wu)
    # square -> triangle (Duffy): (s, t) -> (s, t (1 - s)), jacobian (1 - s)
    bs = U.ravel()
    bt = (V * (1 - U)).ravel()
    bw = (WW * (1 - U)).ravel()
    nodes, weights = [], []
    v = poly.vertices
    for i in range(1, len(v) - 1):
        tri = np.array([v[0], v[i], v[i + 1]])
        for a in range(subdiv):
            for b in range(subdiv - a):
                for up in (False, True):
                    if up and a + b == subdiv - 1:
                        continue
                    if not up:
                        p0 = (a, b)
                        p1 = (a + 1, b)
                        p2 = (a, b + 1)
                    else:
                        p0 = (a + 1, b + 1)
                        p1 = (a, b + 1)
                        p2 = (a + 1, b)
                    corners = []
                    for (ia, ib) in (p0, p1, p2):
                        l1, l2 = ia / subdiv, ib / subdiv
                        corners.append(tri[0] + l1 * (tri[1] - tri[0]) + l2 * (tri[2] - tri[0]))
                    c0, c1, c2 = corners
                    area = 0.5 * abs(_cross(c0, c1, c2))
                    pts = c0 + bs[:, None] * (c1 - c0) + bt[:, None] * (c2 - c0)
                    nodes.append(pts)
                    weights.append(2 * area * bw)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class QuadratureSpec:
    """Descriptor of a quadrature scheme.

    ``gauss``: composite Gauss-Legendre, ``panels`` x ``order`` nodes per axis
    (polar radial axis for balls, with ``angular`` equispaced angles).
    ``midpoint``: product midpoint grid with ``panels * order`` nodes per axis.
    ``qmc``: scrambled Sobol points in the bounding box (``2**panels`` of them).
    """

    scheme: str = "gauss"
    panels: Optional[int] = None
    order: Optional[int] = None
    angular: Optional[int] = None

    def resolved(self, dim: int) -> "QuadratureSpec":
        if self.scheme == "qmc":
            return QuadratureSpec("qmc", self.panels or 14, 1, None)
        if dim == 1:
            return QuadratureSpec(self.scheme, self.panels or 64, self.order or 16, None)
        if dim == 2:
            return QuadratureSpec(self.scheme, self.panels or 8, self.order or 8, self.angular or 128)
        return QuadratureSpec(self.scheme, self.panels or 4, self.order or 6, self.angular or 32)


# ---------------------------------------------------------------------------
# Densities and measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantDensity:
    rate: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.rate)

    def bound(self, region: Region) -> float:
        return self.rate


@dataclass(frozen=True)
class InverseDensity:
    """Density ``scale / x`` on a positive interval (the measure ``dx / x``)."""

    scale: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale / x[..., 0]

    def bound(self, region: Region) -> float:
        return self.scale / float(region.bbox[0][0])


class IntensityMeasure:
    """Finite measure ``density(x) dx`` on a compact region."""

    def __init__(
        self,
        domain: Region,
        density: Optional[Callable] = None,
        name: str = "custom",
        quad: QuadratureSpec = QuadratureSpec(),
        density_max: Optional[float] = None,
        mass: Optional[float] = None,
        params: Optional[dict] = None,
    ):
        self.domain = domain
        self.density = density if density is not None else ConstantDensity(1.0)
        self.name = name
        self.quad_spec = quad
        self._density_max = density_max
        self._mass = mass
        self.params = dict(params or {})
        self._quad_cache: dict = {}

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def rate(self) -> Optional[float]:
        """Constant density value, or None for non-uniform densities."""
        return self.density.rate if isinstance(self.density, ConstantDensity) else None

    @cached_property
    def total_mass(self) -> float:
        if self._mass is not None:
            return float(self._mass)
        if self.rate is not None:
            return float(self.rate * self.domain.volume)
        return float(np.sum(self.quadrature().weights))

    @cached_property
    def density_max(self) -> float:
        if self._density_max is not None:
            return float(self._density_max)
        if hasattr(self.density, "bound"):
            return float(self.density.bound(self.domain))
        q = self.quadrature()
        return 1.05 * float(np.max(self.density(q.nodes)))

    def quadrature(self, spec: Optional[QuadratureSpec] = None) -> Quadrature:
        spec = (spec or self.quad_spec).resolved(self.dim)
        if spec in self._quad_cache:
            return self._quad_cache[spec]
        dom = self.domain
        if spec.scheme == "qmc":
            from scipy.stats import qmc

            lo, hi = dom.bbox
            pts = qmc.Sobol(d=self.dim, scramble=True, seed=12345).random_base2(spec.panels)
            pts = lo + (hi - lo) * pts
            keep = dom.contains(pts)
            vol = float(np.prod(hi - lo))
            nodes = pts[keep]
            base = np.full(len(nodes), vol / len(pts))
            name = f"qmc-sobol-{2**spec.panels}"
        elif isinstance(dom, Box):
            nodes, base = _box_rule(dom, spec.scheme, spec.panels * spec.order, spec.panels, spec.order)
            name = f"{spec.scheme}-box-{spec.panels}x{spec.order}"
        elif isinstance(dom, Ball):
            nodes, base = _ball_rule(dom, spec.scheme, spec.panels, spec.order, spec.angular)
            name = f"{spec.scheme}-polar-{spec.panels}x{spec.order}x{spec.angular}"
        elif isinstance(dom, Polygon):
            nodes, base = _polygon_rule(dom, spec.order, spec.panels)
            name = f"gauss-triangle-{spec.panels}x{spec.order}"
        else:
            raise TypeError(f"no quadrature for {type(dom).__name__}")
        nodes = np.asarray(nodes, dtype=float).reshape(len(base), self.dim)
        q = Quadrature(nodes, base * self.density(nodes), name)
        self._quad_cache[spec] = q
        return q

    def sample_points(self, gen: np.random.Generator, k: int) -> np.ndarray:
        """``k`` i.i.d. points from the normalised density (rejection sampling)."""
        if not (self.total_mass > 0):
            raise ValueError("cannot sample from a measure with zero total mass")
        lo, hi = self.domain.bbox
        out = np.empty((k, self.dim))
        filled = 0
        dmax = self.density_max
        while filled < k:
            need = k - filled
            batch = max(16, int(need * 1.3 / max(self._acceptance(), 1e-3)))
            x = lo + (hi - lo) * gen.random((batch, self.dim))
            ok = self.domain.contains(x)
            if self.rate is None:
                ok &= gen.random(batch) * dmax < self.density(x)
            x = x[ok][:need]
            out[filled : filled + len(x)] = x
            filled += len(x)
        return out

    def _acceptance(self) -> float:
        lo, hi = self.domain.bbox
        return self.total_mass / (self.density_max * float(np.prod(hi - lo)))

    def to_dict(self) -> dict:
        return {"name": self.name, "domain": self.domain.to_dict(), "params": self.params, "total_mass": self.total_mass}

    def __repr__(self):
        return f"IntensityMeasure({self.name}, {self.domain!r}, mass={self.total_mass:.6g})"


def lebesgue(domain=(0.0, 1.0), rate: float = 1.0, quad: QuadratureSpec = QuadratureSpec()) -> IntensityMeasure:
    region = region_from_spec(domain)
    if rate < 0 or not math.isfinite(rate):
        raise ValueError("rate must be finite and non-negative")
    return IntensityMeasure(region, ConstantDensity(float(rate)), "lebesgue", quad, params={"rate": rate})


def dx_over_x(a: float = 0.01, b: float = 1.0, quad: QuadratureSpec = QuadratureSpec()) -> IntensityMeasure:
    """The measure ``dx / x`` on ``[a, b]``, ``0 < a < b``."""
    if not (0 < a < b):
        raise ValueError("need 0 < a < b")
    return IntensityMeasure(
        Interval(a, b), InverseDensity(1.0), "dx_over_x", quad, mass=math.log(b / a), params={"a": a, "b": b}
    )


class AtomicMeasure:
    """Finite sum of weighted Dirac masses; used by exact pathwise oracles."""

    name = "atomic"

    def __init__(self, atoms, weights):
        self.atoms = np.asarray(atoms, dtype=float)
        if self.atoms.ndim == 1:
            self.atoms = self.atoms[:, None]
        self.weights = np.asarray(weights, dtype=float)
        self._q = Quadrature(self.atoms, self.weights, "atoms")

    @property
    def dim(self):
        return self.atoms.shape[1]

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def rate(self):
        return None

    def quadrature(self, spec=None) -> Quadrature:
        return self._q


def measure_from_spec(spec: dict) -> IntensityMeasure:
    """``{"measure": "lebesgue", "domain": [0, 1], "rate": 16}`` and friends."""
    kind = spec.get("measure", "lebesgue")
    qs = QuadratureSpec(
        spec.get("quadrature", "gauss"), spec.get("quad_panels"), spec.get("quad_order"), spec.get("quad_angular")
    )
    if kind == "lebesgue":
        return lebesgue(spec.get("domain", [0.0, 1.0]), float(spec.get("rate", 1.0)), qs)
    if kind == "dx_over_x":
        lo, hi = spec.get("domain", [0.01, 1.0])
        return dx_over_x(float(lo), float(hi), qs)
    raise ValueError(f"unknown measure {kind!r}")


def integrate(m, f: Callable, quad: Optional[QuadratureSpec] = None) -> float:
    """Quadrature estimate of ``int f dm``; ``f`` maps ``(K, d)`` to ``(K,)``."""
    q = m.quadrature(quad) if quad is not None else m.quadrature()
    vals = np.asarray(f(q.nodes), dtype=float)
    return float(np.dot(q.weights, vals))


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------


def _canonical(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return points
    order = np.lexsort(points.T[::-1])
    return points[order]


class Configuration:
    """Finite set of distinct points kept in lexicographic order."""

    __slots__ = ("points",)

    def __init__(self, points=(), dim: Optional[int] = None):
        arr = np.asarray(points, dtype=float)
        if arr.size == 0:
            arr = np.empty((0, dim or (arr.shape[-1] if arr.ndim == 2 else 1)))
        elif arr.ndim == 1:
            arr = arr[:, None] if dim in (None, 1) else arr.reshape(-1, dim)
        if not np.all(np.isfinite(arr)):
            raise ValueError("configuration points must be finite")
        arr = _canonical(arr)
        if len(arr) > 1 and np.any(np.all(arr[1:] == arr[:-1], axis=1)):
            raise ValueError("configuration points must be pairwise distinct")
        arr.setflags(write=False)
        self.points = arr

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __contains__(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.any(np.all(self.points == x, axis=1)))

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def __hash__(self):
        return hash(self.points.tobytes())

    def __repr__(self):
        return f"Configuration({self.points.tolist()})"

    def with_point(self, x) -> "Configuration":
        """``omega`` union ``{x}``; unchanged when ``x`` is already present."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x in self:
            return self
        return Configuration(np.vstack([self.points, x[None, :]]))

    def with_points(self, xs) -> "Configuration":
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim) + 0.0  # -0.0 -> 0.0
        seen = {x.tobytes() for x in self.points + 0.0}
        new = []
        for x in xs:
            key = x.tobytes()
            if key not in seen:  # duplicates collapse, as repeated with_point calls would
                seen.add(key)
                new.append(x)
        if not new:
            return self
        return Configuration(np.vstack([self.points, np.array(new)]))

    def without_point(self, x) -> "Configuration":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        keep = ~np.all(self.points == x, axis=1)
        return Configuration(self.points[keep], dim=self.dim)

    def count(self, region: Region) -> int:
        return counting(self, region)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.dim)])
            for p in self.points:
                w.writerow([repr(float(v)) for v in p])

    @classmethod
    def from_csv(cls, path) -> "Configuration":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        dim = len(rows[0])
        return cls([[float(v) for v in r] for r in rows[1:]], dim=dim)


def counting(omega: Configuration, region: Region) -> int:
    """Number of points of ``omega`` inside ``region``."""
    if len(omega) == 0:
        return 0
    return int(np.count_nonzero(region.contains(omega.points)))


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


def batch_from_configs(configs: Sequence[Configuration], dim: Optional[int] = None):
    dim = dim or (configs[0].dim if configs else 1)
    n = max((len(c) for c in configs), default=0)
    pts = np.full((len(configs), n, dim), np.nan)
    mask = np.zeros((len(configs), n), dtype=bool)
    for i, c in enumerate(configs):
        pts[i, : len(c)] = c.points
        mask[i, : len(c)] = True
    return pts, mask


def config_from_batch(pts: np.ndarray, mask: np.ndarray, i: int) -> Configuration:
    return Configuration(pts[i][mask[i]], dim=pts.shape[-1])


def add_points(pts: np.ndarray, mask: np.ndarray, s: np.ndarray):
    """Append the points ``s`` (shape ``(M, k, d)``) to each row.

    A point already present in its row is appended with a false mask, so the
    union is idempotent.
    """
    if s.shape[1] == 0:
        return pts, mask
    new_mask = np.ones(s.shape[:2], dtype=bool)
    if pts.shape[1]:
        same = np.all(pts[:, :, None, :] == s[:, None, :, :], axis=-1) & mask[:, :, None]
        new_mask &= ~np.any(same, axis=1)
    for i in range(1, s.shape[1]):
        dup = np.all(s[:, :i, :] == s[:, i : i + 1, :], axis=-1) & new_mask[:, :i]
        new_mask[:, i] &= ~np.any(dup, axis=1)
    return np.concatenate([pts, s], axis=1), np.concatenate([mask, new_mask], axis=1)


def sample_batch(m, rows: int, gen: np.random.Generator):
    """``rows`` independent Poisson configurations as a padded batch."""
    mass = m.total_mass
    if not math.isfinite(mass) or mass < 0:
        raise ValueError("total mass must be finite and non-negative")
    counts = gen.poisson(mass, rows) if mass > 0 else np.zeros(rows, dtype=np.int64)
    n = int(counts.max(initial=0))
    pts = np.full((rows, n, m.dim), np.nan)
    mask = np.arange(n)[None, :] < counts[:, None]
    total = int(counts.sum())
    if total:
        pts[mask] = m.sample_points(gen, total)
        # diffuse measures never produce exact collisions; resample if one did
        while True:
            bad = _rows_with_collisions(pts, mask)
            if not bad.size:
                break
            k = int(mask[bad].sum())
            sub = pts[bad]
            sub[mask[bad]] = m.sample_points(gen, k)
            pts[bad] = sub
    return pts, mask


def _rows_with_collisions(pts, mask):
    if pts.shape[1] < 2:
        return np.empty(0, dtype=int)
    key = np.where(mask, pts[..., 0], np.inf)
    srt = np.sort(key, axis=1)
    eq = (srt[:, 1:] == srt[:, :-1]) & np.isfinite(srt[:, 1:])
    rows = np.nonzero(eq.any(axis=1))[0]
    out = []
    for r in rows:
        p = pts[r][mask[r]]
        if len(np.unique(p, axis=0)) < len(p):
            out.append(r)
    return np.asarray(out, dtype=int)


def sample_poisson(m, rng) -> Configuration:
    """One Poisson configuration with intensity ``m``."""
    gen = as_generator(rng)
    pts, mask = sample_batch(m, 1, gen)
    return Configuration(pts[0][mask[0]], dim=m.dim)


def count_in(pts: np.ndarray, mask: np.ndarray, region: Region) -> np.ndarray:
    """Per-row counts of a batch inside ``region``."""
    if pts.shape[1] == 0:
        return np.zeros(pts.shape[0], dtype=np.int64)
    inside = region.contains(np.where(mask[..., None], pts, np.inf)) & mask
    return inside.sum(axis=1)
