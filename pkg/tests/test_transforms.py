import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ppinv.pointprocess import Configuration, RngStream, batch_from_configs, lebesgue, sample_batch
from ppinv.transforms import (
    HullTransform,
    RosenblattMap,
    Transformation,
    convex_hull_vertices,
    cyclic_check,
    disk_check_quadrature,
    extreme_points_bruteforce,
    gradient_images,
    hull_of,
    intensity_preservation_check,
    make_halfswap,
    make_hull_transform,
    make_identity,
    make_negative_control,
    monomials,
    pushforward,
)

TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])


def triangle_cells(p, tri=TRIANGLE, k=8):
    """Index among the k^2 congruent sub-triangles of a barycentric subdivision."""
    M = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    l = np.linalg.solve(M, (p - tri[0]).T).T
    a = np.floor(k * l[:, 0]).astype(int)
    b = np.floor(k * l[:, 1]).astype(int)
    up = (k * l[:, 0] - a) + (k * l[:, 1] - b) > 1
    return (a * k + b) * 2 + up


def uniform_in_triangle(gen, n, tri=TRIANGLE):
    r = gen.random((n, 2))
    flip = r.sum(axis=1) > 1
    r[flip] = 1 - r[flip]
    return tri[0] + r[:, :1] * (tri[1] - tri[0]) + r[:, 1:] * (tri[2] - tri[0])


class TestPushforward:
    def test_identity(self):
        om = Configuration([0.2, 0.9])
        assert pushforward(make_identity(), om) == om

    def test_negmax(self):
        tau = make_negative_control()
        assert pushforward(tau, Configuration([0.5])) == Configuration([1.0])
        pts, mask = sample_batch(tau.source, 500, RngStream(1).generator())
        img = tau.images(pts, mask)
        nonempty = mask.any(axis=1)
        np.testing.assert_array_equal(np.nanmax(img[nonempty][..., 0], axis=1), 1.0)

    def test_invalid_images_rejected(self):
        class Constant(Transformation):
            def apply_batch(self, pts, mask, x):
                return np.full(np.broadcast_shapes(pts.shape[:1] + (1, 1), x.shape), self.value)

        tau = Constant(lebesgue())
        tau.value = 0.5
        with pytest.raises(ValueError, match="colliding"):
            pushforward(tau, Configuration([0.2, 0.7]))
        tau.value = 3.0
        with pytest.raises(ValueError, match="outside"):
            pushforward(tau, Configuration([0.2]))


class TestHalfSwap:
    def test_odd_count_translates(self):
        tau = make_halfswap(1.0)
        om = Configuration([0.1])
        np.testing.assert_allclose(tau(om, 0.6), 0.85)
        np.testing.assert_allclose(tau(om, 0.9), 0.65)
        np.testing.assert_allclose(tau(om, 0.3), 0.3)

    def test_even_count_identity(self):
        tau = make_halfswap(1.0)
        om = Configuration([0.1, 0.2, 0.7])
        for y in (0.55, 0.8, 0.3):
            assert tau(om, y) == y

    def test_bijection_of_configuration(self):
        tau = make_halfswap(2.0)
        om = Configuration([0.3, 1.1, 1.7])
        img = pushforward(tau, om)
        assert len(img) == 3
        np.testing.assert_allclose(sorted(img.points[:, 0]), [0.3, 1.2, 1.6])

    def test_upper_half_points_do_not_matter(self):
        tau = make_halfswap(1.0, rate=4.0)
        gen = RngStream(2).generator()
        pts, mask = sample_batch(tau.source, 10**4, gen)
        x = 0.5 + 0.5 * gen.random((10**4, 1, 1))
        y = gen.random((10**4, 3, 1))
        from ppinv.pointprocess import add_points

        p2, m2 = add_points(pts, mask, x)
        np.testing.assert_array_equal(tau.apply_batch(p2, m2, y), tau.apply_batch(pts, mask, y))

    def test_fixed_point_in_self(self):
        # k = 1: adding t never changes the image of t itself
        tau = make_halfswap(1.0, rate=4.0)
        assert cyclic_check(tau, 1, 10**4, RngStream(3).generator()) is None

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_cyclic(self, k):
        assert cyclic_check(make_halfswap(1.0, rate=4.0), k, 10**4, RngStream(4).generator()) is None


class TestHull:
    def test_triangle(self):
        h = hull_of(Configuration(TRIANGLE, dim=2))
        assert len(h.extreme_points) == 3
        assert not h.interior(TRIANGLE).any()
        e1, e2 = TRIANGLE[1] - TRIANGLE[0], TRIANGLE[2] - TRIANGLE[0]
        np.testing.assert_allclose(h.area, 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0]))

    def test_square_with_center(self):
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
        h = hull_of(Configuration(pts, dim=2))
        assert len(h.extreme_points) == 4
        np.testing.assert_array_equal(h.interior(pts), [False] * 4 + [True])
        np.testing.assert_array_equal(extreme_points_bruteforce(pts), [True] * 4 + [False])

    def test_collinear_boundary_point_not_vertex(self):
        pts = np.array([[0, 0], [2, 0], [1, 0], [1, 1]], dtype=float)
        assert len(convex_hull_vertices(pts)) == 3
        assert not hull_of(pts).interior(np.array([[1.0, 0.0]])).any()

    def test_degenerate(self):
        assert hull_of(np.array([[0.0, 0.0], [1.0, 1.0]])).degenerate
        assert hull_of(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])).degenerate

    @settings(max_examples=50)
    @given(st.integers(0, 10**6))
    def test_bruteforce_agrees(self, seed):
        pts = np.random.default_rng(seed).uniform(-1, 1, (20, 2))
        h = hull_of(pts)
        mask = extreme_points_bruteforce(pts)
        got = {tuple(p) for p in h.extreme_points.points}
        assert got == {tuple(p) for p in pts[mask]}

    def test_json(self):
        h = hull_of(Configuration(TRIANGLE, dim=2))
        d = json.loads(h.to_json())
        assert len(d["vertices"]) == 3 and not d["degenerate"]


class TestRosenblatt:
    def test_round_trip(self):
        rm = RosenblattMap(convex_hull_vertices(np.random.default_rng(5).normal(size=(30, 2))))
        poly = hull_of(rm.vertices)
        x = uniform_in_triangle(np.random.default_rng(6), 10**4, rm.vertices[:3])
        x = x[poly.interior(x)]
        back = rm.inverse(rm.forward(x))
        assert np.max(np.abs(back - x)) < 1e-9

    def test_forward_maps_to_unit_square_uniformly(self):
        rm = RosenblattMap(TRIANGLE)
        x = uniform_in_triangle(np.random.default_rng(7), 10**5)
        uv = rm.forward(x)
        assert np.all((uv >= 0) & (uv <= 1))
        for c in (0, 1):
            assert stats.kstest(uv[:, c], "uniform").pvalue > 1e-3

    def test_shuffle_preserves_uniform_law(self):
        rm = RosenblattMap(TRIANGLE, shift=(0.5, 0.5))
        x = uniform_in_triangle(np.random.default_rng(8), 10**5)
        y = rm.shuffle(x)
        assert hull_of(TRIANGLE).interior(y).mean() > 0.999
        counts = np.bincount(triangle_cells(y), minlength=128)
        occupied = counts[np.bincount(triangle_cells(x), minlength=128) > 0]
        assert len(occupied) == 64
        assert stats.chisquare(occupied).pvalue > 0.01

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            RosenblattMap(np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]]))


class TestHullTransform:
    def test_zero_shift_is_identity(self):
        tau = make_hull_transform((0.0, 0.0))
        om = Configuration(np.random.default_rng(1).uniform(-0.5, 0.5, (8, 2)), dim=2)
        assert pushforward(tau, om) == om

    def test_extreme_points_and_outside_fixed(self):
        tau = make_hull_transform()
        gen = np.random.default_rng(2)
        for _ in range(20):
            pts = gen.uniform(-0.7, 0.7, (12, 2))
            om = Configuration(pts, dim=2)
            h = hull_of(om)
            np.testing.assert_array_equal(tau.apply(om, h.vertices), h.vertices)
            out = np.array([[0.9, 0.0], [0.0, -0.95]])
            np.testing.assert_array_equal(tau.apply(om, out), out)
            inside = pts[h.interior(pts)]
            if len(inside):
                assert np.all(tau.apply(om, inside) != inside)

    def test_depends_only_on_extreme_points(self):
        tau = make_hull_transform(rate=10.0)
        gen = RngStream(3).generator()
        pts, mask = sample_batch(tau.source, 1000, gen)
        x = tau.source.sample_points(gen, 1000).reshape(1000, 1, 2)
        full = tau.apply_batch(pts, mask, x)
        ext = [hull_of(pts[r][mask[r]]).extreme_points for r in range(1000)]
        ep, em = batch_from_configs(ext, dim=2)
        np.testing.assert_array_equal(tau.apply_batch(ep, em, x), full)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_cyclic(self, k):
        tau = make_hull_transform(rate=10.0)
        assert cyclic_check(tau, k, 1000, RngStream(4).spawn(k).generator()) is None

    def test_intensity_preserved(self):
        tau = make_hull_transform(rate=10.0)
        gen = RngStream(5).generator()
        for _ in range(20):
            om = Configuration(gen.uniform(-0.6, 0.6, (int(gen.integers(3, 12)), 2)), dim=2)
            rep = intensity_preservation_check(tau, om, monomials(3), 1e-3, disk_check_quadrature())
            assert rep["pass"], rep["errors"]

    def test_pickle_drops_cache(self):
        import pickle

        tau = make_hull_transform()
        tau.apply(Configuration(TRIANGLE - 0.3, dim=2), [[0.0, 0.1]])
        assert tau._maps
        assert pickle.loads(pickle.dumps(tau))._maps == {}


class TestNegativeControl:
    def test_cyclic_violation_found(self):
        hit = cyclic_check(make_negative_control(), 2, 1000, RngStream(6).generator())
        assert hit is not None and hit["trial"] < 1000

    def test_intensity_not_preserved(self):
        tau = make_negative_control()
        rep = intensity_preservation_check(tau, Configuration([0.5]), [lambda x: x[..., 0]])
        assert not rep["pass"]

    def test_identity_preserves(self):
        rep = intensity_preservation_check(make_identity(), Configuration([0.5]), [lambda x: x[..., 0], lambda x: np.cos(x[..., 0])])
        assert rep["pass"] and max(e["rel_error"] for e in rep["errors"]) < 1e-12

    def test_gradient_images_shape(self):
        tau = make_negative_control()
        pts, mask = sample_batch(tau.source, 10, RngStream(7).generator())
        t = tau.source.sample_points(RngStream(8).generator(), 30).reshape(10, 3, 1)
        assert gradient_images(tau, pts, mask, t).shape == (10, 3, 3, 1)
