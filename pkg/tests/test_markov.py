import logging
import math

import numpy as np
import pytest

from euclid_qft.covariance import build_covariance, n_inner_product
from euclid_qft.errors import GeometryError
from euclid_qft.lattice import Region, make_geometry
from euclid_qft.markov import (
    adjoint_inject,
    conditional_covariance_check,
    covariance_property_residual,
    dilation_semigroup,
    f_inner_product,
    inject,
    markov_check,
    markov_scan,
    one_particle_hamiltonian,
    project,
    reflexivity_residual,
    semigroup_residuals,
    slice_delta_norm,
)


@pytest.fixture
def cylinder():
    return build_covariance(make_geometry(2, [4, 48], 1.0, "periodic"), 1.0)


def test_projection_is_idempotent_and_fixes_region_vectors(box_covariance):
    region = Region.from_sites(box_covariance.geometry, range(8, 24))
    e = project(box_covariance, region)
    f = np.random.default_rng(1).normal(size=64)
    np.testing.assert_allclose(e(e(f)), e(f), atol=1e-10)
    supported = np.zeros(64)
    supported[region.sites] = f[region.sites]
    np.testing.assert_allclose(e(supported), supported, atol=1e-10)


def test_projection_rejects_empty_region(box_covariance):
    with pytest.raises(GeometryError):
        project(box_covariance, Region.from_sites(box_covariance.geometry, []))


def test_nearest_neighbour_field_is_markov(box_covariance):
    assert markov_check(box_covariance, 0, 3) < 1e-8
    assert conditional_covariance_check(box_covariance, 0, 3) < 1e-10
    assert conditional_covariance_check(box_covariance, 1, 5) < 1e-10


def test_next_nearest_control_breaks_markov_property():
    cov = build_covariance(make_geometry(1, [16], 1.0, "dirichlet"), 1.0, "next-nearest")
    assert conditional_covariance_check(cov, 0, 8) > 1e-4
    assert markov_check(cov, 0, 8) > 1e-4


def test_single_plane_does_not_separate_a_torus(torus_covariance):
    assert conditional_covariance_check(torus_covariance, 0, 1) > 1e-4


def test_markov_scan_covers_interior_planes(chain_1d):
    rows = markov_scan(build_covariance(chain_1d, 0.5), 0, probes=2)
    assert [row["plane"] for row in rows] == list(range(1, 15))
    assert max(row["residual_conditional"] for row in rows) < 1e-10


def test_injection_norm_matches_n_inner_product(torus_covariance):
    f = np.array([1.0, -0.5, 0.25, 2.0])
    lifted = inject(torus_covariance, 2, f)
    assert f_inner_product(torus_covariance, f, f, t=2) == pytest.approx(
        n_inner_product(torus_covariance, lifted, lifted)
    )


def test_adjoint_inverts_injection(torus_covariance):
    f = np.array([0.3, 1.0, -2.0, 0.5])
    np.testing.assert_allclose(adjoint_inject(torus_covariance, 0, inject(torus_covariance, 0, f)), f, atol=1e-10)


def test_adjoint_pairs_with_injection(torus_covariance):
    rng = np.random.default_rng(5)
    f = rng.normal(size=4)
    field = rng.normal(size=16)
    lhs = f_inner_product(torus_covariance, f, adjoint_inject(torus_covariance, 1, field), t=1)
    assert lhs == pytest.approx(n_inner_product(torus_covariance, inject(torus_covariance, 1, f), field))


def test_slice_vector_length_checked(torus_covariance):
    with pytest.raises(GeometryError):
        inject(torus_covariance, 0, np.ones(3))


def test_slice_delta_norm_one_dimension():
    # a single-site slice: ‖δ₀‖²_F = C(0, 0) of the 1D chain
    cov = build_covariance(make_geometry(1, [64], 1.0), 1.0)
    assert slice_delta_norm(cov) == pytest.approx(cov.entry(0, 0))


def test_time_reflection_fixes_slice_zero(torus_covariance):
    assert reflexivity_residual(torus_covariance, np.ones(4)) < 1e-10


def test_time_translation_moves_injections(torus_covariance):
    assert covariance_property_residual(torus_covariance, np.arange(4.0), 1, 3) == 0.0


def test_dilation_semigroup_laws(cylinder):
    residuals = semigroup_residuals(cylinder, times=(1, 2, 3))
    assert residuals["semigroup"] < 1e-10
    assert residuals["symmetry"] < 1e-10
    assert residuals["identity"] < 1e-10


def test_dilation_semigroup_is_a_contraction(cylinder):
    assert np.linalg.norm(dilation_semigroup(cylinder, 2), 2) < 1.0


def test_dilation_semigroup_needs_periodic_time(box_covariance, cylinder):
    with pytest.raises(GeometryError, match="periodic"):
        dilation_semigroup(box_covariance, 1)
    with pytest.raises(GeometryError, match="half"):
        dilation_semigroup(cylinder, 25)


def test_short_ring_warns_about_wraparound(caplog):
    cov = build_covariance(make_geometry(1, [8], 1.0), 0.1)
    with caplog.at_level(logging.WARNING, logger="euclid_qft.markov"):
        dilation_semigroup(cov, 1)
    assert "wrap-around" in caplog.text


def test_one_particle_energies_follow_lattice_dispersion(cylinder):
    spectrum = one_particle_hamiltonian(cylinder)
    np.testing.assert_allclose(spectrum.omega, spectrum.closed_form(), rtol=1e-8)
    assert spectrum.m_eff == pytest.approx(math.acosh(1.5), rel=1e-8)
    assert np.all(spectrum.continuum() >= 1.0)


def test_one_particle_energy_approaches_mass_on_fine_lattice():
    cov = build_covariance(make_geometry(1, [256], 0.1), 1.0)
    assert one_particle_hamiltonian(cov).m_eff == pytest.approx(1.0, abs=1e-3)
