import numpy as np
import pytest

from oracles import sine_law_angles
from triplewell.errors import DegenerateTensionError, LabelingError, TriangleViolationError
from triplewell.junction import (JunctionMap, junction_angles, make_junction_map,
                                 perimeter_energy, sine_law_residual, surface_tensions,
                                 tensions_from_t)
from triplewell.partitions import (PartitionNetwork, Segment, boundary_from_angles,
                                   solve_problem1, solve_problem2, three_arcs)


def test_tensions_345():
    t = surface_tensions(3, 4, 5)
    assert (t.t1, t.t2, t.t3) == (1.0, 2.0, 3.0)


def test_tensions_equal():
    t = surface_tensions(2.0, 2.0, 2.0)
    assert np.allclose(t.t, 1.0)


def test_tensions_degenerate():
    with pytest.raises(DegenerateTensionError):
        surface_tensions(5, 2, 3)


def test_equal_costs_give_120_degrees():
    a = junction_angles(1.0, 1.0, 1.0)
    assert np.allclose(a, 2 * np.pi / 3, atol=1e-9)


def test_543_matches_nonlinear_solve():
    a = junction_angles(5.0, 4.0, 3.0)
    ref = sine_law_angles(5.0, 4.0, 3.0)
    assert np.allclose(a, ref, atol=1e-6)
    assert np.allclose(np.degrees(a), [143.130, 126.870, 90.000], atol=1e-3)
    assert a.sum() == pytest.approx(2 * np.pi, abs=1e-14)
    assert sine_law_residual(a, (5.0, 4.0, 3.0)) < 1e-12


def test_near_degenerate_closes_third_angle():
    a = junction_angles(2.0 - 1e-6, 1.0, 1.0)
    assert a[2] < 1e-2


def test_triangle_violation():
    with pytest.raises(TriangleViolationError):
        junction_angles(3.0, 1.0, 1.0)


def test_map_sector_layout():
    ang = junction_angles(5.0, 4.0, 3.0)
    m = make_junction_map(ang)
    eps = 1e-3
    assert m.label_at(np.array([np.cos(eps), np.sin(eps)])) == 0
    inside_first = ang[0] - eps
    assert m.label_at(np.array([np.cos(inside_first), np.sin(inside_first)])) == 0
    just_after = ang[0] + eps
    assert m.label_at(np.array([np.cos(just_after), np.sin(just_after)])) == 1
    mid2 = ang[0] + 0.5 * ang[1]
    assert np.allclose(m.evaluate(np.array([np.cos(mid2), np.sin(mid2)]),
                                  np.eye(3)[:, :2]), np.eye(3)[1, :2])


def test_map_rotation_equivariance():
    ang = junction_angles(5.0, 4.0, 3.0)
    m0 = make_junction_map(ang, 0.0)
    m1 = make_junction_map(ang, np.pi)
    x = np.random.default_rng(1).normal(size=(500, 2))
    assert np.array_equal(m1.label_at(-x), m0.label_at(x))


def test_map_text_round_trip():
    m = make_junction_map(junction_angles(5.0, 4.0, 3.0), 0.3, (2, 0, 1), (0.1, -0.2))
    back = JunctionMap.from_text(m.to_text())
    x = np.random.default_rng(2).normal(size=(200, 2))
    assert np.array_equal(back.label_at(x), m.label_at(x))


def test_bad_assignment():
    with pytest.raises(LabelingError):
        make_junction_map((2.0, 2.0, 2.28), assignment=(0, 0, 1))


def test_perimeter_central_junction():
    t = tensions_from_t(0.5, 0.5, 0.5)
    net = solve_problem1(three_arcs(), t)
    assert perimeter_energy(net, t) == pytest.approx(3.0, abs=1e-12)


def test_perimeter_chord():
    theta = 0.7
    b = boundary_from_angles([-theta, theta], [0, 1])
    t = surface_tensions(1.3, 1.0, 1.0)
    net = solve_problem1(b, t)
    assert perimeter_energy(net, t) == pytest.approx(1.3 * 2 * np.sin(theta), rel=1e-12)


def test_perimeter_rejects_same_labels():
    seg = Segment(np.zeros(2), np.ones(2), (1, 1))
    net = PartitionNetwork([], [seg], np.zeros((0, 2)), [], 0.0, "bad")
    with pytest.raises(LabelingError):
        perimeter_energy(net, tensions_from_t(1, 1, 1))


def test_perimeter_wetted_counts_arcs_once():
    t = tensions_from_t(1.0, 1.0, 1.0)
    wet = solve_problem2(three_arcs(), t, 1e-3)
    # closed form: three segments shortened by the tangent length, three arcs of
    # radius r and turning angle pi/3 each weighted by their own t
    r = 1.0 / wet.kappa[0]
    tangent = r / np.tan(np.pi / 3)
    by_hand = 3 * 2.0 * (1.0 - tangent) + 3 * 1.0 * r * (np.pi / 3)
    assert perimeter_energy(wet, t) == pytest.approx(by_hand, rel=1e-10)
    assert wet.cost == pytest.approx(by_hand, rel=1e-10)
