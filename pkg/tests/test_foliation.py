import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epstein_lab import foliation as fol

taus = st.builds(complex, st.floats(-2, 2), st.floats(0.3, 3))
classes = st.tuples(st.integers(-6, 6), st.integers(-6, 6)).filter(lambda c: c != (0, 0))


def test_extremal_length_examples():
    assert fol.extremal_length(fol.TorusPoint(1j), fol.TorusFoliation(1, 0)) == pytest.approx(1.0, abs=1e-15)
    assert fol.extremal_length(fol.TorusPoint(2j), fol.TorusFoliation(0, 1)) == pytest.approx(2.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(taus, classes, st.floats(0.2, 3))
def test_extremal_length_properties(tau, c, w):
    p = fol.TorusPoint(tau)
    F = fol.TorusFoliation(c[0], c[1], w)
    e = fol.extremal_length(p, F)
    assert abs(e - fol.extremal_length_oracle(p, F)) < 1e-10 * e
    assert fol.extremal_length(p, F.scaled(1.7)) == pytest.approx(1.7**2 * e, rel=1e-12)
    # the vertical realisation has the same norm
    assert fol.extremal_length(p, F.negated()) == pytest.approx(e, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(taus, classes)
def test_gardiner_gradient_against_fd(tau, c):
    p = fol.TorusPoint(tau)
    F = fol.TorusFoliation(*c)
    g = fol.gardiner_gradient(p, F)
    h = 1e-6 * p.tau.imag
    for d in (1.0, 1j):
        fd = (fol.extremal_length(fol.TorusPoint(tau + h * d), F)
              - fol.extremal_length(fol.TorusPoint(tau - h * d), F)) / (2 * h)
        assert abs((g * d).real - fd) < 1e-5 * max(1.0, abs(g))


def test_pairing_with_beltrami_is_the_differential():
    p = fol.TorusPoint(0.3 + 1.1j)
    F = fol.TorusFoliation(2, -1, 0.8)
    dtau = 0.4 - 0.7j
    lhs = fol.pairing(p, fol.hm_section_torus(p, F), fol.beltrami(p, dtau)).real
    rhs = (fol.gardiner_gradient(p, F) * dtau).real
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_horizontal_foliation_of_section():
    p = fol.TorusPoint(0.2 + 1.3j)
    F = fol.TorusFoliation(1, 2)
    c = fol.hm_section_torus(p, F)
    # the class of F itself is horizontal, so it has zero horizontal intersection
    assert fol.intersection_number((p, c), (1, 2)) < 1e-12
    assert fol.intersection_number((p, c), (1, 0)) > 0


def test_proportional_classes_do_not_fill():
    with pytest.raises(fol.NotFillingError):
        fol.critical_point(fol.TorusFoliation(1, 1), fol.TorusFoliation(2, 2))


def test_critical_point_balances_extremal_lengths():
    F, G = fol.TorusFoliation(2, 1, 1.3), fol.TorusFoliation(-1, 3, 0.7)
    cp = fol.critical_point(F, G)
    assert cp.certificate < 1e-9
    assert fol.extremal_length(cp.point, F) == pytest.approx(fol.extremal_length(cp.point, G), rel=1e-8)


def test_teich_line_is_a_geodesic():
    line = fol.teich_line(fol.TorusFoliation(1, 0), fol.TorusFoliation(0, 1), [0.5, 1.0, 2.0])
    assert line.geodesic[0] == "vertical"
    assert line.collinearity < 1e-6
    assert [p.tau.imag for p in line.points] == pytest.approx([0.5, 1.0, 2.0], rel=1e-8)


def test_square_torus_periods_and_json(tmp_path):
    s = fol.square_torus()
    assert s.genus == 1 and s.is_translation and s.check_stratum()
    per = fol.periods(s, [[(0, 0)], [(0, 1)]])
    assert np.allclose(per, [1, 1j])
    s2 = fol.FlatSurface.from_json(json.dumps(s.to_json()))
    assert np.allclose(s2.polygons[0], s.polygons[0])


def test_octagon_stratum():
    s = fol.regular_octagon_surface()
    assert s.genus == 2
    assert s.cone_angles() == pytest.approx([6 * np.pi])
    assert list(s.zero_orders()) == [4]
    assert s.check_stratum()


def test_bad_surfaces_and_paths():
    with pytest.raises(ValueError):
        fol.FlatSurface([[0, 1, 1 + 1j, 1j]], [((0, 0), (0, 2))])
    with pytest.raises(ValueError):
        fol.FlatSurface([[0, 1, 1 + 2j, 1j]], [((0, 0), (0, 2)), ((0, 1), (0, 3))])
    s = fol.FlatSurface([[0, 2, 2 + 1j, 1j], [0, 1, 1 + 1j, 1j]],
                        [((0, 0), (0, 2)), ((0, 1), (1, 3)), ((1, 1), (0, 3)), ((1, 0), (1, 2))])
    assert s.genus == 1
    with pytest.raises(fol.PathError):
        s.holonomy([])
