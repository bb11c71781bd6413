import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epstein_lab import geom
from epstein_lab.geom import BoundaryPoint, GeometryError, H3Point, MoebiusTransform

finite = st.floats(-3, 3, allow_nan=False)
heights = st.floats(0.1, 5, allow_nan=False)


def test_moebius_compose_inverse_is_identity():
    rng = np.random.default_rng(0)
    m = MoebiusTransform.random(rng)
    assert m.compose(m.inverse()).equals(MoebiusTransform.identity(), tol=1e-10)


def test_apply_boundary_infinity():
    m = MoebiusTransform(2, 1, 1, 1)
    assert apply_inf(m).value == 2
    assert geom.apply_boundary(MoebiusTransform(1, 0, 1, 1), BoundaryPoint(-1)).infinite


def apply_inf(m):
    return geom.apply_boundary(m, BoundaryPoint.infinity())


def test_invalid_points():
    with pytest.raises(GeometryError):
        H3Point(0, 0.0)
    with pytest.raises(GeometryError):
        BoundaryPoint(1.0, True)
    with pytest.raises(GeometryError):
        MoebiusTransform.disk_automorphism(1.5)


@settings(max_examples=30, deadline=None)
@given(finite, finite, heights, finite, finite, heights, st.integers(0, 10_000))
def test_distance_is_moebius_invariant(x1, y1, t1, x2, y2, t2, seed):
    m = MoebiusTransform.random(np.random.default_rng(seed))
    p, q = H3Point(complex(x1, y1), t1), H3Point(complex(x2, y2), t2)
    d0 = geom.distance(p, q)
    d1 = geom.distance(geom.apply_h3(m, p), geom.apply_h3(m, q))
    assert abs(d0 - d1) < 1e-8 * max(1.0, d0)


@settings(max_examples=30, deadline=None)
@given(finite, finite, heights)
def test_hyperboloid_round_trip(x, y, t):
    X = geom.to_hyperboloid(complex(x, y), t)
    assert abs(geom.minkowski(X, X) + 1) < 1e-9 * max(1.0, X[0] ** 2)
    z, tt = geom.from_hyperboloid(X)
    assert abs(z - complex(x, y)) < 1e-9 and abs(tt - t) < 1e-9 * t


def test_visual_density_at_foot_point():
    # the visual metric from (w, t) at z = w has density 2/t
    assert geom.visual_metric_density(H3Point(0.3j, 0.5), BoundaryPoint(0.3j)) == pytest.approx(4.0)
    with pytest.raises(GeometryError):
        geom.visual_metric_density(H3Point(0, 1), BoundaryPoint.infinity())


def test_exp_map_moves_unit_speed():
    X = geom.to_hyperboloid(0.2 + 0.1j, 0.7)
    N = geom.toward_boundary(np.array(0.2 + 0.1j), np.array(0.7), np.array(1.0 + 0j))
    Y = geom.exp_map(X, N, 0.4)
    assert -geom.minkowski(X, Y) == pytest.approx(np.cosh(0.4), rel=1e-12)
