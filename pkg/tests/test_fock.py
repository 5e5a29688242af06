import math

import numpy as np
import pytest

from euclid_qft.errors import BudgetError
from euclid_qft.fock import (
    fock_basis,
    free_hamiltonian_probe,
    functoriality_residual,
    hypercontractivity_probe,
    lp_norm,
    mehler,
    second_quantize,
)


def test_fock_basis_order():
    assert fock_basis(2, 2) == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    assert len(fock_basis(3, 4)) == math.comb(7, 4)


def test_identity_quantizes_to_identity():
    gamma = second_quantize(np.eye(3), 4)
    np.testing.assert_allclose(gamma.matrix, np.eye(len(gamma.basis)), atol=1e-14)


@pytest.mark.parametrize("modes, degree", [(1, 4), (2, 3), (3, 2), (4, 1)])
def test_zero_quantizes_to_vacuum_projection(modes, degree):
    gamma = second_quantize(np.zeros((modes, modes)), degree)
    assert gamma.basis[0] == (0,) * modes
    vacuum = np.zeros(len(gamma.basis))
    vacuum[0] = 1.0
    np.testing.assert_array_equal(gamma.matrix, np.outer(vacuum, vacuum))


def test_mode_count_is_read_off_the_matrix():
    assert second_quantize(np.eye(2), 3, modes=2).modes == 2
    assert second_quantize(np.eye(3), 2).modes == 3
    with pytest.raises(ValueError, match="expected 3 modes"):
        second_quantize(np.eye(2), 3, modes=3)


def test_single_mode_is_mehler_diagonal():
    gamma = second_quantize([[0.5]], 6)
    np.testing.assert_allclose(gamma.matrix, np.diag(0.5 ** np.arange(7)), atol=1e-14)
    np.testing.assert_allclose(mehler([1.0, 1.0, 1.0], 0.5), [1.0, 0.5, 0.25])


def test_rotation_quantizes_to_orthogonal_operator():
    angle = 0.7
    rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    gamma = second_quantize(rotation, 5)
    np.testing.assert_allclose(gamma.matrix.T @ gamma.matrix, np.eye(len(gamma.basis)), atol=1e-12)
    assert gamma.grading_leak() == 0.0


def test_quantized_operator_preserves_degree():
    a = np.random.default_rng(2).normal(size=(3, 3))
    gamma = second_quantize(a, 3)
    assert gamma.grading_leak() == 0.0
    np.testing.assert_allclose(gamma.level(1), a, atol=1e-14)


@pytest.mark.parametrize("modes", [1, 2, 3, 4])
def test_functoriality(modes):
    rng = np.random.default_rng(modes)
    a = 0.5 * rng.normal(size=(modes, modes))
    b = 0.5 * rng.normal(size=(modes, modes))
    assert functoriality_residual(a, b, 4) < 1e-10


def test_second_quantize_budget():
    with pytest.raises(BudgetError):
        second_quantize(np.eye(5), 2)
    with pytest.raises(BudgetError):
        second_quantize(np.eye(2), 9)
    with pytest.raises(ValueError):
        second_quantize(np.ones((2, 3)), 2)


def test_lp_norm_of_polynomials_uses_gauss_hermite():
    second = lp_norm(lambda x: x, 2)
    assert second.method == "gauss-hermite"
    assert second.value == pytest.approx(1.0)
    assert lp_norm(lambda x: x, 4).value == pytest.approx(3 ** 0.25)


def test_lp_norm_falls_back_to_adaptive_at_kinks():
    result = lp_norm(lambda x: np.asarray(x), 1, breakpoints=[0.0])
    assert result.method == "adaptive"
    assert result.converged
    assert result.value == pytest.approx(math.sqrt(2 / math.pi), rel=1e-9)


def test_lp_norm_needs_p_at_least_one():
    with pytest.raises(ValueError):
        lp_norm(lambda x: x, 0.5)


def test_contraction_within_bound_is_hypercontractive():
    report = hypercontractivity_probe(0.5, 2.0, 4.0, trials=10, seed=1)
    assert report.bound_applies
    assert report.converged
    assert report.positivity_ok and report.mean_ok
    assert report.max_ratio <= 1 + 1e-6
    assert report.passed
    assert report.to_dict()["verdict"] == "pass"


def test_contraction_beyond_bound_finds_witness():
    report = hypercontractivity_probe(0.9, 2.0, 4.0, trials=5, seed=1)
    assert not report.bound_applies
    assert report.witness_found
    assert report.max_ratio > 1.0


@pytest.mark.parametrize("p, q, norm", [(1.0, 2.0, 0.5), (3.0, 2.0, 0.5), (2.0, 4.0, 1.5)])
def test_hypercontractivity_rejects_bad_exponents(p, q, norm):
    with pytest.raises(ValueError):
        hypercontractivity_probe(norm, p, q)


def test_free_hamiltonian_probe_sits_on_the_boundary():
    report = free_hamiltonian_probe(2.0, 0.5, 1.0, trials=5)
    assert report.q == pytest.approx(1 + math.e)
    assert report.contraction_norm == pytest.approx(math.exp(-0.5))
    assert report.bound_applies
    assert report.max_ratio <= 1 + 1e-6


def test_free_hamiltonian_probe_rejects_negative_time():
    with pytest.raises(ValueError):
        free_hamiltonian_probe(2.0, -1.0, 1.0)
