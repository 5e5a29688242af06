"""Gaussian measure with covariance ⟨·,·⟩_N: moments, sampling and Wick products.

The field smeared against a site vector u is φ(u) = a^d Σ_x u_x φ_x, a centered
Gaussian with variance ⟨u, u⟩_N. Point values φ_x have covariance C(x, y).
"""

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from euclid_qft.covariance import CovarianceOperator, n_inner_product
from euclid_qft.errors import BudgetError, ConvergenceError
from euclid_qft.rng import stream

logger = logging.getLogger(__name__)

HAFNIAN_MAX_ORDER = 24
BRUTEFORCE_MAX_ORDER = 12
WICK_PAIRING_MAX_DEGREE = 8
SAMPLE_BATCH = 4096
HIGH_VARIANCE_THRESHOLD = 0.05


def gauss_hermite(n: int, variance: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(X)], X ~ N(0, variance); weights sum to 1."""
    if n < 1:
        raise ValueError(f"node count must be >= 1, got {n}")
    if not variance > 0:
        raise ValueError(f"variance must be > 0, got {variance}")
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    return nodes * math.sqrt(variance), weights / math.sqrt(2 * math.pi)


# --- Hafnian moments ---


def _check_gram(gram, limit: int) -> np.ndarray:
    g = np.atleast_2d(np.asarray(gram, dtype=float))
    if g.size == 0:
        return np.zeros((0, 0))
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"gram must be square, got shape {g.shape}")
    if g.shape[0] > limit:
        raise BudgetError(f"gram order {g.shape[0]} exceeds the budget of {limit}")
    if not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(g).max()))):
        raise ValueError("gram must be symmetric")
    return g


def hafnian(gram) -> float:
    """[u₁ … u_n] = Σ_{i≥2} [u₁ u_i][u₂ … û_i … u_n], zero for odd n, 1 for n = 0.

    Memoized over the bitmask of indices still to be paired.
    """
    g = _check_gram(gram, HAFNIAN_MAX_ORDER)
    n = g.shape[0]
    if n % 2:
        return 0.0
    entries = g.tolist()

    @lru_cache(maxsize=None)
    def pairings(mask: int) -> float:
        if mask == 0:
            return 1.0
        first = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << first)
        row = entries[first]
        total = 0.0
        remaining = rest
        while remaining:
            low = remaining & -remaining
            j = low.bit_length() - 1
            remaining ^= low
            if row[j]:
                total += row[j] * pairings(rest ^ low)
        return total

    return pairings((1 << n) - 1)


def _matchings(indices: tuple[int, ...]) -> Iterator[list[tuple[int, int]]]:
    if not indices:
        yield []
        return
    first, rest = indices[0], indices[1:]
    for k, partner in enumerate(rest):
        for matching in _matchings(rest[:k] + rest[k + 1:]):
            yield [(first, partner), *matching]


def hafnian_bruteforce(gram) -> float:
    """Sum over all (n−1)!! perfect matchings; test oracle for :func:`hafnian`."""
    g = _check_gram(gram, BRUTEFORCE_MAX_ORDER)
    n = g.shape[0]
    if n % 2:
        return 0.0
    return float(sum(math.prod(g[i, j] for i, j in m) for m in _matchings(tuple(range(n)))))


@dataclass(frozen=True)
class GaussianMomentProblem:
    """Pair covariances [u_i u_j]; ``moment()`` is E[φ(u₁) … φ(u_n)]."""

    gram: np.ndarray

    @classmethod
    def from_vectors(cls, covariance: CovarianceOperator, vectors: Sequence) -> "GaussianMomentProblem":
        n = len(vectors)
        gram = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                gram[i, j] = gram[j, i] = n_inner_product(covariance, vectors[i], vectors[j])
        if n and np.linalg.eigvalsh(gram).min() < -1e-10 * max(1.0, float(np.abs(gram).max())):
            raise ValueError("gram built from vectors is not positive semidefinite")
        return cls(gram)

    @classmethod
    def from_sites(cls, covariance: CovarianceOperator, sites: Sequence[int]) -> "GaussianMomentProblem":
        """Point-value moments E[φ_{x₁} … φ_{x_n}]."""
        sites = list(sites)
        columns = {y: covariance.column(y) for y in set(sites)}
        gram = np.array([[columns[y][x] for y in sites] for x in sites])
        return cls(0.5 * (gram + gram.T) if gram.size else np.zeros((0, 0)))

    def moment(self) -> float:
        return hafnian(self.gram)


# --- Sampling ---


def iter_field_batches(
    covariance: CovarianceOperator, count: int, seed: int, batch_size: int = SAMPLE_BATCH
) -> Iterator[np.ndarray]:
    """Yield φ = C^{1/2} ξ in blocks of ``batch_size`` rows.

    Block b is drawn from stream (seed, b), so the k-th configuration is the
    same whatever the consumer does with the earlier blocks.
    """
    if count < 0:
        raise ValueError(f"sample count must be >= 0, got {count}")
    n = covariance.geometry.n_sites
    for block, start in enumerate(range(0, count, batch_size)):
        rows = min(batch_size, count - start)
        xi = stream(seed, block).standard_normal((rows, n))
        yield covariance.apply_sqrt(xi)


def sample_fields(covariance: CovarianceOperator, count: int, seed: int) -> np.ndarray:
    """``count`` independent free-field configurations, shape (count, V)."""
    batches = list(iter_field_batches(covariance, count, seed))
    if not batches:
        return np.zeros((0, covariance.geometry.n_sites))
    return np.concatenate(batches)


def sample_field(covariance: CovarianceOperator, seed: int) -> np.ndarray:
    return sample_fields(covariance, 1, seed)[0]


@dataclass(frozen=True)
class GeneratingCheck:
    lam: float
    variance: float
    exact: float
    estimate: float
    stderr: float
    samples: int
    high_variance: bool

    @property
    def passed(self) -> bool:
        if self.stderr == 0:
            return abs(self.estimate - self.exact) <= 1e-12 * self.exact
        return abs(self.estimate - self.exact) <= 3 * self.stderr


def gaussian_generating_check(
    covariance: CovarianceOperator, u, lam: float, samples: int = 100_000, seed: int = 0
) -> GeneratingCheck:
    """Monte Carlo E[e^{λφ(u)}] against exp(λ²⟨u,u⟩_N / 2)."""
    g = covariance.geometry
    u = g.check_field(u)
    variance = n_inner_product(covariance, u, u)
    exact = math.exp(0.5 * lam * lam * variance)
    relative_spread = math.sqrt(math.expm1(lam * lam * variance) / max(samples, 1))
    high_variance = relative_spread > HIGH_VARIANCE_THRESHOLD
    if high_variance:
        logger.warning(
            "generating function at lambda=%g with %d samples has relative spread %.2f; estimate unreliable",
            lam, samples, relative_spread,
        )
    if lam == 0:
        return GeneratingCheck(lam, variance, 1.0, 1.0, 0.0, samples, high_variance)
    values = np.concatenate(
        [np.exp(lam * g.volume_element * (batch @ u)) for batch in iter_field_batches(covariance, samples, seed)]
    )
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(samples))
    return GeneratingCheck(lam, variance, exact, estimate, stderr, samples, high_variance)


def gaussian_generating_quadrature(variance: float, lam: float, nodes: int = 64) -> float:
    """E[e^{λX}] for X ~ N(0, variance) by Gauss–Hermite quadrature."""
    x, w = gauss_hermite(nodes, variance)
    return float(w @ np.exp(lam * x))


# --- Wick products ---


@lru_cache(maxsize=None)
def _hermite_integers(n: int) -> tuple[int, ...]:
    """Monic orthogonal polynomials of N(0, 1) by Gram–Schmidt on 1, z, z², …

    Uses the exact moments E[z^k] = (k−1)!! (0 for odd k), so the
    coefficients come out as exact integers.
    """

    def moment(k: int) -> Fraction:
        if k % 2:
            return Fraction(0)
        return Fraction(math.prod(range(k - 1, 0, -2)))

    def inner(p: list[Fraction], q: list[Fraction]) -> Fraction:
        return sum((pi * qj * moment(i + j) for i, pi in enumerate(p) for j, qj in enumerate(q)), Fraction(0))

    basis: list[list[Fraction]] = []
    for degree in range(n + 1):
        poly = [Fraction(0)] * degree + [Fraction(1)]
        for prev in basis:
            coefficient = inner(poly, prev) / inner(prev, prev)
            for k, value in enumerate(prev):
                poly[k] -= coefficient * value
        basis.append(poly)
    top = basis[n]
    if any(c.denominator != 1 for c in top):
        raise ConvergenceError(f"non-integer Wick coefficients at degree {n}")
    return tuple(int(c) for c in top)


@dataclass(frozen=True)
class WickPolynomialTable:
    """:φⁿ:_c as ascending monomial coefficients; leading coefficient 1."""

    degree: int
    variance: float
    coefficients: np.ndarray

    def __call__(self, phi):
        return np.polynomial.polynomial.polyval(phi, self.coefficients)


def wick_power(n: int, c: float) -> WickPolynomialTable:
    """:φⁿ:_c, the projection of φⁿ onto the degree-n chaos of N(0, c).

    Gram–Schmidt runs on the unit-variance variable z = φ/√c; rescaling gives
    the φ^k coefficient h_k c^{(n−k)/2}.
    """
    if n < 0:
        raise ValueError(f"degree must be >= 0, got {n}")
    if not c > 0:
        raise ValueError(f"variance must be > 0, got {c}")
    integers = _hermite_integers(n)
    coefficients = np.array([h * c ** ((n - k) / 2) for k, h in enumerate(integers)], dtype=float)
    return WickPolynomialTable(degree=n, variance=float(c), coefficients=coefficients)


def wick_order(coefficients: Sequence[float], c: float) -> np.ndarray:
    """Ascending coefficients of :P:_c = Σ_n p_n :φⁿ:_c for P = Σ_n p_n φⁿ."""
    out = np.zeros(len(coefficients))
    for n, p in enumerate(coefficients):
        if p:
            out[: n + 1] += p * wick_power(n, c).coefficients
    return out


def wick_exponential(s: float, c: float, phi):
    """:e^{sφ}:_c = e^{sφ − s²c/2}, mean one under N(0, c)."""
    return np.exp(s * np.asarray(phi) - 0.5 * s * s * c)


def wick_pairing_hafnian(n: int, m: int, c_xx: float, c_yy: float, c_xy: float) -> float:
    """E[:φ_xⁿ: :φ_yᵐ:] by expanding both Wick powers into monomials.

    Every monomial expectation E[φ_x^k φ_y^l] is a hafnian of the (k+l)-point
    Gram matrix built from the three covariances.
    """
    table_x = wick_power(n, c_xx).coefficients
    table_y = wick_power(m, c_yy).coefficients
    total = 0.0
    for k, hx in enumerate(table_x):
        for l, hy in enumerate(table_y):
            if not hx or not hy or (k + l) % 2:
                continue
            labels = [0] * k + [1] * l
            pair = np.array([[c_xx, c_xy], [c_xy, c_yy]])
            total += hx * hy * hafnian(pair[np.ix_(labels, labels)])
    return total


def wick_pairing_expectation(n: int, m: int, covariance: CovarianceOperator, x: int, y: int,
                             cross_check: bool = True) -> float:
    """E[:φ_xⁿ: :φ_yᵐ:] = δ_{nm} n! C(x, y)ⁿ with site-wise Wick variances C(x,x), C(y,y)."""
    if max(n, m) > WICK_PAIRING_MAX_DEGREE:
        raise BudgetError(f"Wick pairing degrees are limited to {WICK_PAIRING_MAX_DEGREE}, got ({n}, {m})")
    if min(n, m) < 0:
        raise ValueError(f"degrees must be >= 0, got ({n}, {m})")
    c_xy = covariance.entry(x, y)
    value = math.factorial(n) * c_xy**n if n == m else 0.0
    if cross_check:
        expanded = wick_pairing_hafnian(n, m, covariance.entry(x, x), covariance.entry(y, y), c_xy)
        scale = max(1.0, abs(value), math.factorial(n + m) * max(covariance.entry(x, x), covariance.entry(y, y)) ** ((n + m) / 2))
        if abs(expanded - value) > 1e-9 * scale:
            raise ConvergenceError(f"Wick pairing ({n}, {m}) disagrees with its hafnian expansion: {value} vs {expanded}")
    return value
