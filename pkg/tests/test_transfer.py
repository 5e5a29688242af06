import math

import numpy as np
import pytest

from euclid_qft.errors import BudgetError, GeometryError
from euclid_qft.interaction import InteractionPolynomial
from euclid_qft.transfer import (
    build_transfer,
    energy_density_scan,
    fkn_check,
    ground_state,
    nelson_symmetry_check,
    nelson_symmetry_mc,
    node_agreement,
    partition_trace,
    semigroup_norm,
    slice_matrix,
    slice_vacuum_covariance,
    vacuum_amplitude,
    vacuum_amplitude_mc,
    vacuum_envelope,
)

QUARTIC = InteractionPolynomial.quartic(0.1)


def test_slice_matrix():
    np.testing.assert_allclose(
        slice_matrix(3, 1.0, 1.0, "periodic"), [[3, -1, -1], [-1, 3, -1], [-1, -1, 3]]
    )
    np.testing.assert_allclose(slice_matrix(2, 1.0, 0.5, "dirichlet"), [[2.25, -1], [-1, 2.25]])
    np.testing.assert_allclose(slice_matrix(1, 2.0, 0.5, "periodic"), [[1.0]])


def test_single_site_slice_vacuum_covariance():
    b = 3.0
    assert slice_vacuum_covariance(np.array([[b]]))[0, 0] == pytest.approx(1 / math.sqrt(b * (b + 4)))


@pytest.mark.parametrize(
    "kwargs, error",
    [
        ({"n_s": 0}, GeometryError),
        ({"mass": 0.0}, ValueError),
        ({"nodes": 7}, ValueError),
        ({"n_s": 4}, BudgetError),
        ({"wick_variance": -1.0}, ValueError),
    ],
)
def test_build_transfer_validation(kwargs, error):
    options = {"n_s": 1, "mass": 1.0, "spacing": 1.0, **kwargs}
    with pytest.raises(error):
        build_transfer(**options)


def test_transfer_matrix_is_symmetric_and_positive():
    transfer = build_transfer(2, 1.0, 1.0, QUARTIC, nodes=8)
    assert transfer.dimension == 64
    np.testing.assert_allclose(transfer.matrix, transfer.matrix.T, rtol=1e-13)
    assert transfer.matrix.min() > 0


def test_free_ground_state_is_the_reference():
    state = ground_state(build_transfer(1, 1.0, 1.0))
    assert state.energy == 0.0
    assert state.overlap == pytest.approx(1.0)
    assert state.norm2 == pytest.approx(1.0)
    assert state.vector.min() > 0


def test_free_gap_is_lattice_one_particle_energy():
    mass, spacing = 1.0, 0.5
    state = ground_state(build_transfer(1, mass, spacing, nodes=24))
    expected = math.acosh(1 + (spacing * mass) ** 2 / 2) / spacing
    assert state.gap == pytest.approx(expected, rel=1e-2)


@pytest.mark.parametrize("mass, spacing", [(1.0, 1.0), (2.0, 0.5), (0.5, 1.0)])
def test_free_single_site_spectrum_is_geometric(mass, spacing):
    eigenvalues = np.linalg.eigvalsh(build_transfer(1, mass, spacing, nodes=24).matrix)[::-1][:5]
    ratios = eigenvalues[1:] / eigenvalues[:-1]
    expected = math.exp(-math.acosh(1 + (spacing * mass) ** 2 / 2))
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-3)
    np.testing.assert_allclose(ratios, expected, rtol=1e-3)


def test_interacting_ground_state():
    state = ground_state(build_transfer(1, 1.0, 1.0, QUARTIC))
    assert 0.9 < state.overlap < 1.0
    assert state.vector.min() > 0
    assert state.norm1 <= state.norm2 + 1e-12
    assert state.gap > 0
    assert set(state.to_dict()) >= {"energy_inverse_length", "gap_inverse_length", "overlap", "min_component"}


def test_large_transfer_uses_power_iteration():
    transfer = build_transfer(3, 1.0, 1.0, QUARTIC, nodes=9)
    state = ground_state(transfer)
    assert state.iterations > 0
    residual = transfer.matrix @ state.vector - state.eigenvalue * state.vector
    assert np.linalg.norm(residual) < 1e-8 * state.eigenvalue


def test_semigroup_norm_and_vacuum_envelope():
    transfer = build_transfer(2, 1.0, 1.0, QUARTIC, nodes=8)
    state = ground_state(transfer)
    for n in (1, 3):
        norm, expected = semigroup_norm(transfer, state, n)
        assert norm == pytest.approx(expected, rel=1e-10)
        assert vacuum_envelope(transfer, state, n)["ok"]


def test_ground_state_energy_converges_in_nodes():
    agreement = node_agreement(1, 1.0, 1.0, QUARTIC)
    assert agreement["difference"] < 1e-5


@pytest.mark.parametrize("n_s, n_t, nodes", [(1, 3, 12), (2, 2, 8), (3, 1, 8)])
def test_factored_path_integral_matches_monolithic_sum(n_s, n_t, nodes):
    result = fkn_check(build_transfer(n_s, 1.0, 1.0, QUARTIC, nodes=nodes), n_t)
    assert result["residual"] < 1e-10


def test_path_integral_oracle_budget():
    with pytest.raises(BudgetError):
        fkn_check(build_transfer(2, 1.0, 1.0, QUARTIC, nodes=8), 3)


def test_vacuum_amplitude_edge_cases():
    free = build_transfer(2, 1.0, 1.0, nodes=8)
    assert vacuum_amplitude(free, 0) == 1.0
    assert vacuum_amplitude(free, 3) == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(ValueError):
        vacuum_amplitude(free, -1)


def test_vacuum_amplitude_matches_monte_carlo():
    exact = vacuum_amplitude(build_transfer(2, 1.0, 1.0, QUARTIC), 3)
    estimate = vacuum_amplitude_mc(2, 3, 1.0, 1.0, QUARTIC, samples=50_000, seed=5)
    assert abs(estimate.z - exact) < 5 * estimate.stderr + 1e-4


def test_free_partition_trace_ratio():
    result = partition_trace(build_transfer(2, 1.0, 1.0, nodes=8), 4)
    assert result["ratio"] == pytest.approx(1.0)


@pytest.mark.parametrize("l_sites, t_sites", [(1, 3), (2, 3)])
def test_nelson_symmetry_on_the_grid(l_sites, t_sites):
    result = nelson_symmetry_check(l_sites, t_sites, 1.0, 1.0, QUARTIC, nodes=8)
    assert result.residual < 1e-10
    assert result.amplitude_lt != 1.0


def test_nelson_square_and_validation():
    assert nelson_symmetry_check(2, 2, 1.0, 1.0, QUARTIC, nodes=8).residual == 0.0
    with pytest.raises(ValueError, match="square"):
        nelson_symmetry_check(1, 3, 1.0, 1.0, QUARTIC, nodes=8, time_spacing=0.5)
    with pytest.raises(GeometryError):
        nelson_symmetry_check(0, 3, 1.0, 1.0, QUARTIC)


def test_nelson_symmetry_by_monte_carlo():
    result = nelson_symmetry_mc(2, 3, 1.0, 1.0, QUARTIC, samples=20_000, seed=1)
    assert result.method == "mc"
    assert result.residual < 5.0
    assert result.to_dict()["stderr"] > 0


def test_free_energy_density_scan():
    scan = energy_density_scan([1, 2, 3], 1.0, 1.0, InteractionPolynomial.zero(), nodes=8)
    assert scan.energies == (0.0, 0.0, 0.0)
    assert scan.shrinking
    assert [row["l_sites"] for row in scan.rows()] == [1, 2, 3]


def test_interacting_energy_density_scan_rows():
    scan = energy_density_scan([1, 2], 1.0, 1.0, QUARTIC, nodes=16)
    rows = scan.rows()
    assert rows[1]["alpha"] == pytest.approx(rows[1]["energy_inverse_length"] / 2)
    assert len(scan.differences) == 1
