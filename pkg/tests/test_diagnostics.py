import numpy as np
import pytest

from conftest import constant_field
from triplewell import diagnostics as D
from triplewell.errors import DomainError
from triplewell.junction import junction_angles, make_junction_map
from triplewell.solver import (Field, disc_spec, midpoint_profile, network_field, relax,
                               sample_map)


@pytest.fixture(scope="module")
def slab_disc(pot):
    """zeta_12(x1) sampled on the disc of radius 8 (h = 0.04), Neumann."""
    g = disc_spec(401, radius=8.0)
    prof = midpoint_profile(pot, 0, 1)
    return Field(prof.evaluate(g.coords()[..., 0]), g, "neumann")


@pytest.fixture(scope="module")
def cone(pot):
    jm = make_junction_map(junction_angles(1.0, 1.0, 1.0), rotation=0.4, assignment=(2, 0, 1))
    return jm, sample_map(jm, disc_spec(129), pot.wells)


def mollified_cone(pot, n=257, radius=16.0):
    """Junction cone with each interface replaced by its 1D profile (unit scale)."""
    from triplewell.partitions import solve_problem1, three_arcs
    from triplewell.junction import tensions_from_t

    b = three_arcs()
    net = solve_problem1(b, tensions_from_t(1.0, 1.0, 1.0))
    return network_field(net, b, pot, 1.0, disc_spec(n, radius=radius), bc="neumann")


# --------------------------------------------------------------------------
# stress tensor and Pohozaev
# --------------------------------------------------------------------------
def test_stress_tensor_constant(pot):
    T, div = D.stress_tensor(constant_field(disc_spec(33), pot.wells[0]), pot)
    assert np.all(T == 0.0) and np.all(div == 0.0)


def test_stress_tensor_slab_first_integral(slab_disc, pot):
    T, _ = D.stress_tensor(slab_disc, pot)
    inner = slab_disc.mask == 1
    # T_11 = |zeta'|^2/2 - W vanishes by the first integral, up to O(h^2) differencing
    assert np.max(np.abs(T[..., 0, 0][inner])) < 5e-3
    assert np.max(np.abs(T[..., 1, 1][inner])) > 1.0


def test_stress_divergence_shrinks_with_h(pot, sym_network):
    b, _, net = sym_network
    norms = []
    for n in (96, 192):
        f = relax(network_field(net, b, pot, 12.0, disc_spec(n)), pot, 12.0, tol=1e-8)
        _, div = D.stress_tensor(f, pot, 12.0)
        norms.append(np.sqrt(np.sum(div ** 2) * f.spacing ** 2))
    assert norms[1] < norms[0] / 1.5


def test_pohozaev_constant_is_zero(pot):
    f = constant_field(disc_spec(65), pot.wells[1])
    assert D.pohozaev_residual(f, pot, 0.5) == 0.0


def test_pohozaev_relaxed_junction(junction_field, pot, sym_network):
    m0 = sym_network[2].cost
    assert abs(D.pohozaev_residual(junction_field, pot, 0.5, R=32.0)) <= 5e-2 * m0


def test_pohozaev_slab_small(slab_disc, pot):
    # the slab solves the Euler-Lagrange equation, so the identity holds up to O(h)
    assert abs(D.pohozaev_residual(slab_disc, pot, 4.0)) < 0.04 * 1.84 / 4.0 + 1e-3


def test_pohozaev_random_field_is_order_one(pot):
    g = disc_spec(65)
    f = Field(np.random.default_rng(0).normal(size=g.shape + (2,)), g)
    assert abs(D.pohozaev_residual(f, pot, 0.5, R=4.0)) > 0.5


def test_pohozaev_circle_must_fit(pot):
    with pytest.raises(DomainError):
        D.pohozaev_residual(constant_field(disc_spec(33), pot.wells[0]), pot, 1.5)


# --------------------------------------------------------------------------
# W tilde, equipartition, radial energy
# --------------------------------------------------------------------------
def test_wtilde_constant(pot):
    prof = D.wtilde_profile(constant_field(disc_spec(65), pot.wells[0]), pot, [0.25, 0.5, 0.9])
    assert np.all(prof.values == 0.0) and prof.monotonicity_defect == 0.0


def test_wtilde_slab_tends_to_c12(slab_disc, pot, costs):
    prof = D.wtilde_profile(slab_disc, pot, [2.0, 4.0, 7.5])
    assert prof.values[-1] == pytest.approx(costs[0], rel=0.01)
    assert np.all(prof.values >= 0)


def test_wtilde_relaxed_tail(junction_field, pot):
    prof = D.wtilde_profile(junction_field, pot, [0.125, 0.25, 0.5, 0.98], R=32.0)
    assert prof.tail_variation < 0.10


def test_equipartition_slab_and_constant(slab_disc, pot):
    fit = D.equipartition_defect(slab_disc, pot, [2.0, 4.0, 7.5])
    assert np.all(fit.values >= 0)
    # an equipartitioned interface of length 15 carries energy about 28
    assert fit.values[-1] < 1e-3
    zero = D.equipartition_defect(constant_field(disc_spec(33), pot.wells[0]), pot, [0.5, 0.9])
    assert np.all(zero.values == 0.0)


def test_radial_energy_cone_vs_slab(slab_disc, pot):
    prof = midpoint_profile(pot, 0, 1)
    g = slab_disc.grid
    offset = Field(prof.evaluate(g.coords()[..., 0] - 1.5), g, "neumann")
    # a slab through the center is itself a half-plane cone; shifted, it is not
    centered_val = D.radial_energy(slab_disc, 2.0, 7.5)
    offset_val = D.radial_energy(offset, 2.0, 7.5)
    cone_val = D.radial_energy(mollified_cone(pot), 2.0, 7.5)
    assert centered_val > 0 and offset_val > 0
    assert offset_val > 1.0
    assert cone_val < 0.1 * offset_val and centered_val < 0.1 * offset_val


def test_radial_energy_degenerate(pot):
    with pytest.raises(DomainError):
        D.radial_energy(constant_field(disc_spec(33), pot.wells[0]), 0.5, 0.5)


# --------------------------------------------------------------------------
# fits and classification
# --------------------------------------------------------------------------
def test_distance_to_A_self_fit(cone, pot):
    jm, f = cone
    dist, best = D.distance_to_A(f, (1.0, 1.0, 1.0), pot=pot)
    # the residual is the bilinear smearing of the sampled interfaces, O(h)
    assert dist < f.spacing
    pts = f.coords()[f.mask == 1]
    agree = np.mean(best.label_at(pts) == jm.label_at(pts))
    assert agree > 0.995
    fine = sample_map(jm, disc_spec(257), pot.wells)
    assert D.distance_to_A(fine, (1.0, 1.0, 1.0), pot=pot)[0] < 0.6 * dist


def test_distance_to_A_rotation_37(pot):
    rot = np.deg2rad(37.0)
    jm = make_junction_map(junction_angles(1.0, 1.0, 1.0), rotation=rot)
    f = sample_map(jm, disc_spec(129), pot.wells)
    dist, best = D.distance_to_A(f, (1.0, 1.0, 1.0), pot=pot)
    # one node width of interface per ray over the inscribed square
    assert dist < 3 * f.spacing * np.sqrt(3.0)


def test_classify_cone_slab_constant(cone, slab_disc, pot, costs):
    _, f = cone
    rep = D.classify_blowdown(f, pot, [0.25, 0.5, 0.9], (1.0, 1.0, 1.0))
    assert rep.classification == "triple-junction"
    assert rep.distance < f.spacing
    rep = D.classify_blowdown(slab_disc, pot, [2.0, 4.0, 7.5], costs[:3])
    assert rep.classification == "half-plane"
    rep = D.classify_blowdown(constant_field(disc_spec(65), pot.wells[2]), pot, [0.5, 0.9],
                              costs[:3])
    assert rep.classification == "constant"
    assert rep.best_fit == {"well": 2}


def test_classify_rotation_equivariance(pot):
    base = make_junction_map(junction_angles(1.0, 1.0, 1.0), rotation=0.2)
    f = sample_map(base, disc_spec(129), pot.wells)
    # rotating the domain by 120 degrees and relabeling the sectors
    turned = make_junction_map(junction_angles(1.0, 1.0, 1.0), rotation=0.2 + 2 * np.pi / 3,
                               assignment=(2, 0, 1))
    g = sample_map(turned, disc_spec(129), pot.wells)
    d1, _ = D.distance_to_A(f, (1.0, 1.0, 1.0), pot=pot)
    d2, _ = D.distance_to_A(g, (1.0, 1.0, 1.0), pot=pot)
    assert abs(d1 - d2) < 2 * np.pi / 720 * 3


def test_blowdown_report_exports(tmp_path, cone, pot):
    _, f = cone
    rep = D.classify_blowdown(f, pot, [0.25, 0.5, 0.9], (1.0, 1.0, 1.0))
    rep.to_csv(tmp_path / "b.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0] == "radius,wtilde,equipartition_defect,radial_term" and len(rows) == 4
    text = rep.summary()
    assert "classification = triple-junction" in text and "threshold_margin = 0.2" in text
    rep.write_pgm(tmp_path / "b.pgm", n=32)
    assert (tmp_path / "b.pgm").read_bytes().startswith(b"P5\n32 32\n255\n")


# --------------------------------------------------------------------------
# circle traces
# --------------------------------------------------------------------------
def test_transition_level(pot):
    W0, d0 = D.transition_level(pot)
    assert d0 == pytest.approx(0.25 * np.sqrt(3.0))
    assert 0 < W0 < pot.W(np.zeros(2))


def test_circle_slab_half_circles(slab_disc, pot, costs):
    cp = D.circle_profile(slab_disc, pot, 7.5)
    for e in cp.arc_energies:
        assert e == pytest.approx(costs[0], rel=0.05)
    assert len(cp.crossings) == 4
    assert all(t["sup_distance"] < 0.05 for t in cp.transitions)


def test_circle_constant(pot):
    cp = D.circle_profile(constant_field(disc_spec(65), pot.wells[0]), pot, 0.5)
    assert cp.energy < 1e-20 and len(cp.crossings) == 0 and cp.transitions == []


def test_circle_relaxed_junction(junction_field, pot, costs):
    cp = D.circle_profile(junction_field, pot, 0.5, R=32.0)
    assert cp.energy == pytest.approx(sum(costs[:3]), rel=0.10)
    assert abs(cp.winding) == 1
    assert len(cp.transitions) == 3
    assert {tuple(sorted(t["pair"])) for t in cp.transitions} == {(0, 1), (0, 2), (1, 2)}


def test_circle_must_fit(pot):
    with pytest.raises(DomainError):
        D.circle_profile(constant_field(disc_spec(33), pot.wells[0]), pot, 2.0)
