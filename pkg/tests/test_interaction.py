import numpy as np
import pytest

from euclid_qft.covariance import build_covariance
from euclid_qft.errors import BudgetError, DegenerateWeightsError
from euclid_qft.gaussian import sample_fields
from euclid_qft.interaction import (
    CouplingScan,
    InteractionPolynomial,
    SchwingerEstimate,
    action_variance,
    action_variance_refinement,
    build_action,
    coupling_scan,
    evaluate_action,
    partition_function_mc,
    partition_function_quadrature,
    schwinger_function,
)
from euclid_qft.lattice import box_region, make_geometry


@pytest.fixture
def short_chain():
    return build_covariance(make_geometry(1, [4], 1.0, "dirichlet"), 1.0)


@pytest.mark.parametrize(
    "coefficients, message",
    [
        ([1.0, 0, 1.0], "P\\(0\\)"),
        ([0, 1.0, 0, 1.0], "bounded below"),
        ([0, 0, -1.0], "bounded below"),
        ([0] * 10 + [1.0], "degree"),
        ([0, 0, float("nan"), 0, 1.0], "finite"),
    ],
)
def test_polynomial_validation(coefficients, message):
    with pytest.raises(ValueError, match=message):
        InteractionPolynomial.from_coefficients(coefficients)


def test_polynomial_normalization():
    assert InteractionPolynomial.from_coefficients([0, 0, 1.0, 0, 0]).degree == 2
    assert InteractionPolynomial.from_coefficients([0, 0, 0]).is_zero
    assert InteractionPolynomial.zero().is_zero
    quartic = InteractionPolynomial.quartic(0.1)
    assert quartic.is_even
    assert quartic(2.0) == pytest.approx(1.6)


def test_wick_ordered_quartic():
    np.testing.assert_allclose(InteractionPolynomial.quartic(0.5).wick_ordered(2.0), 0.5 * np.array([12, 0, -12, 0, 1]))


def test_action_at_zero_field(torus_covariance):
    action = build_action(torus_covariance, InteractionPolynomial.quartic(0.2))
    expected = -0.2 * 3 * np.sum(torus_covariance.variances**2)
    assert evaluate_action(action, np.zeros(16)) == pytest.approx(expected)
    assert len(action.tables) == 1


def test_dirichlet_action_groups_sites_by_variance(box_covariance):
    action = build_action(box_covariance, InteractionPolynomial.quartic(0.1))
    assert 1 < len(action.tables) < 64


def test_action_restricted_to_region(box_covariance):
    region = box_region(box_covariance.geometry, (2, 2), (3, 3))
    action = build_action(box_covariance, InteractionPolynomial.quartic(0.1), region)
    field = np.zeros(64)
    field[0] = 5.0
    outside = evaluate_action(action, field)
    assert outside == pytest.approx(evaluate_action(action, np.zeros(64)))


def test_wick_ordered_action_has_zero_mean_and_exact_variance(torus_covariance):
    action = build_action(torus_covariance, InteractionPolynomial.from_coefficients([0, 0, 0.3, 0, 0.1]))
    u = action.evaluate_batch(sample_fields(torus_covariance, 100_000, seed=2))
    stderr = u.std() / np.sqrt(u.size)
    assert abs(u.mean()) < 5 * stderr
    assert np.mean(u**2) == pytest.approx(action_variance(action), rel=0.05)


def test_free_partition_function_is_one(torus_covariance):
    action = build_action(torus_covariance, InteractionPolynomial.zero())
    estimate = partition_function_mc(action, samples=1000, seed=0)
    assert estimate.z == 1.0
    assert estimate.stderr == 0.0
    assert estimate.to_dict()["Z"] == 1.0
    assert action_variance(action) == 0.0


def test_quadrature_partition_function_obeys_jensen(short_chain):
    free = build_action(short_chain, InteractionPolynomial.zero())
    assert partition_function_quadrature(free) == pytest.approx(1.0, rel=1e-12)
    for lam in (0.01, 0.1, 1.0):
        action = build_action(short_chain, InteractionPolynomial.quartic(lam))
        assert partition_function_quadrature(action) >= 1.0 - 1e-12


def test_quadrature_budget(box_covariance):
    with pytest.raises(BudgetError):
        partition_function_quadrature(build_action(box_covariance, InteractionPolynomial.quartic(0.1)))


def test_partition_function_methods_agree():
    cov = build_covariance(make_geometry(1, [3], 1.0), 1.0)
    action = build_action(cov, InteractionPolynomial.quartic(0.1))
    exact = partition_function_quadrature(action)
    estimate = partition_function_mc(action, samples=100_000, seed=4)
    assert abs(estimate.z - exact) < 5 * estimate.stderr
    assert estimate.jensen_ok


def test_partition_function_needs_samples(torus_covariance):
    with pytest.raises(ValueError):
        partition_function_mc(build_action(torus_covariance, InteractionPolynomial.zero()), samples=1)


def test_free_two_point_function_by_quadrature(short_chain):
    action = build_action(short_chain, InteractionPolynomial.zero())
    estimate = schwinger_function(action, [(0,), (1,)], method="quadrature")
    assert estimate.value == pytest.approx(short_chain.entry(0, 1), rel=1e-10)
    assert estimate.stderr == 0.0
    assert estimate.to_dict()["boundary"] == "dirichlet"


def test_free_two_point_function_by_reweighting(torus_covariance):
    action = build_action(torus_covariance, InteractionPolynomial.zero())
    estimate = schwinger_function(action, [(0, 0), (1, 0)], samples=50_000, seed=1)
    assert abs(estimate.value - torus_covariance.entry(0, 4)) < 5 * estimate.stderr


def test_reweighting_matches_quadrature(short_chain):
    action = build_action(short_chain, InteractionPolynomial.quartic(0.1))
    exact = schwinger_function(action, [(1,), (2,)], method="quadrature")
    estimate = schwinger_function(action, [(1,), (2,)], samples=100_000, seed=3)
    assert abs(estimate.value - exact.value) < 5 * estimate.stderr
    assert estimate.to_dict()["effective_samples"] > 50_000


@pytest.mark.parametrize("points", [[(0,), (1,), (2,)], [(1,)], [(0,), (0,), (3,)], [(0,), (1,), (2,), (3,), (3,)]])
def test_odd_point_functions_vanish_by_quadrature(short_chain, points):
    action = build_action(short_chain, InteractionPolynomial.quartic(0.1))
    assert abs(schwinger_function(action, points, method="quadrature").value) < 1e-10


def test_odd_point_function_vanishes_by_reweighting(torus_covariance):
    action = build_action(torus_covariance, InteractionPolynomial.quartic(0.1))
    estimate = schwinger_function(action, [(0, 0), (1, 0), (2, 1)], samples=20_000, seed=5)
    assert estimate.stderr > 0
    assert abs(estimate.value) < 4 * estimate.stderr


def test_reweighting_refuses_degenerate_weights(box_covariance):
    action = build_action(box_covariance, InteractionPolynomial.quartic(20.0))
    with pytest.raises(DegenerateWeightsError, match="mcmc"):
        schwinger_function(action, [(3, 3), (4, 4)], samples=2000, seed=0)


def test_unknown_method(short_chain):
    with pytest.raises(ValueError, match="method"):
        schwinger_function(build_action(short_chain, InteractionPolynomial.zero()), [(0,)], method="exact")


def test_action_variance_refinement_rows():
    rows = action_variance_refinement(1.0, 4.0, [1.0, 0.5], InteractionPolynomial.quartic(0.1))
    assert [row.sites for row in rows] == [16, 64]
    assert all(row.variance > 0 for row in rows)
    with pytest.raises(ValueError, match="decreasing"):
        action_variance_refinement(1.0, 4.0, [0.5, 1.0], InteractionPolynomial.quartic(0.1))


def test_coupling_scan_uses_common_samples(torus_covariance):
    scan = coupling_scan(torus_covariance, [(0, 0), (1, 0)], couplings=(0.0, 0.05, 0.1), samples=50_000, seed=0)
    assert scan.couplings == (0.0, 0.05, 0.1)
    assert [e.seed for e in scan.estimates] == [0, 0, 0]
    assert scan.values[0] == pytest.approx(torus_covariance.entry(0, 4), rel=0.1)


@pytest.mark.parametrize(
    "values, direction",
    [((0.1, 0.2, 0.3), "increasing"), ((0.3, 0.2, 0.1), "decreasing"), ((0.1, 0.3, 0.2), "mixed")],
)
def test_coupling_scan_direction(values, direction):
    estimates = tuple(SchwingerEstimate(((0,), (1,)), v, 0.0, 10, 0, "reweight") for v in values)
    scan = CouplingScan((0.0, 0.1, 0.2), estimates)
    assert scan.direction == direction
    assert scan.monotone == (direction != "mixed")
