"""Wick-ordered polynomial interactions on a finite region Λ.

The interacting measure is dμ_Λ = e^{U_Λ} dμ / Z_Λ with

    U_Λ = −a^d Σ_{x∈Λ} :P(φ_x):_{c_x},      Z_Λ = E_μ[e^{U_Λ}],

where μ is the free lattice field and c_x = C(x, x). The lattice spacing is
the ultraviolet smearing: φ_x is already a smeared field with finite variance.
Wick ordering gives E_μ[U_Λ] = 0, hence Z_Λ >= 1 by Jensen.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from euclid_qft.analysis import jackknife
from euclid_qft.covariance import CovarianceOperator, build_covariance
from euclid_qft.errors import BudgetError, DegenerateWeightsError, GeometryError
from euclid_qft.gaussian import gauss_hermite, iter_field_batches, wick_order
from euclid_qft.lattice import Boundary, Region, make_geometry

logger = logging.getLogger(__name__)

MAX_POLYNOMIAL_DEGREE = 8
VARIANCE_DEDUP_TOL = 1e-12
QUADRATURE_MAX_SITES = 6
QUADRATURE_NODES = 16
QUADRATURE_CHUNK = 1 << 18
JACKKNIFE_BLOCKS = 64
MIN_EFFECTIVE_SAMPLES = 50
ESS_WARN_FRACTION = 0.05
METHODS = ("reweight", "mcmc", "quadrature")


@dataclass(frozen=True)
class InteractionPolynomial:
    """P(φ) = Σ_n p_n φⁿ, normalized to P(0) = 0 and bounded below (or identically 0)."""

    coefficients: tuple[float, ...]

    @classmethod
    def from_coefficients(cls, coefficients: Iterable[float]) -> "InteractionPolynomial":
        values = [float(c) for c in coefficients]
        while values and values[-1] == 0:
            values.pop()
        if values and values[0] != 0:
            raise ValueError(f"P(0) must be 0, got constant term {values[0]}")
        if any(not math.isfinite(c) for c in values):
            raise ValueError("polynomial coefficients must be finite")
        degree = len(values) - 1
        if degree > MAX_POLYNOMIAL_DEGREE:
            raise ValueError(f"polynomial degree must be <= {MAX_POLYNOMIAL_DEGREE}, got {degree}")
        if degree > 0 and (degree % 2 or values[-1] <= 0):
            raise ValueError(
                f"P must be bounded below: even degree with positive leading coefficient, got degree {degree} "
                f"with leading coefficient {values[-1]}"
            )
        return cls(tuple(values))

    @classmethod
    def quartic(cls, lam: float) -> "InteractionPolynomial":
        """λφ⁴."""
        return cls.from_coefficients([0, 0, 0, 0, lam])

    @classmethod
    def zero(cls) -> "InteractionPolynomial":
        return cls(())

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def is_zero(self) -> bool:
        return not self.coefficients

    @property
    def is_even(self) -> bool:
        return all(c == 0 for c in self.coefficients[1::2])

    def __call__(self, phi):
        return np.polynomial.polynomial.polyval(phi, np.array(self.coefficients or (0.0,)))

    def wick_ordered(self, c: float) -> np.ndarray:
        if self.is_zero:
            return np.zeros(1)
        return wick_order(self.coefficients, c)


@dataclass(frozen=True, eq=False)
class WickAction:
    """U_Λ with Wick tables cached per distinct site variance."""

    covariance: CovarianceOperator
    polynomial: InteractionPolynomial
    region: Region
    tables: tuple[np.ndarray, ...]
    table_index: np.ndarray

    @property
    def geometry(self):
        return self.covariance.geometry

    @cached_property
    def _site_table(self) -> np.ndarray:
        """Table number per lattice site, −1 outside Λ."""
        out = np.full(self.geometry.n_sites, -1, dtype=np.int64)
        out[self.region.sites] = self.table_index
        return out

    def site_density(self, site: int, values):
        """a^d :P(φ_x):_{c_x} at one site; 0 outside Λ."""
        k = self._site_table[site]
        if k < 0 or self.polynomial.is_zero:
            return np.zeros_like(np.asarray(values, dtype=float))
        return self.geometry.volume_element * np.polynomial.polynomial.polyval(values, self.tables[k])

    def evaluate_batch(self, fields: np.ndarray) -> np.ndarray:
        """U for each row of ``fields`` (shape (n, V))."""
        fields = np.atleast_2d(np.asarray(fields, dtype=float))
        if fields.shape[-1] != self.geometry.n_sites:
            raise GeometryError(f"configurations have {fields.shape[-1]} sites, geometry needs {self.geometry.n_sites}")
        total = np.zeros(fields.shape[0])
        if self.polynomial.is_zero:
            return total
        for k, table in enumerate(self.tables):
            sites = self.region.sites[self.table_index == k]
            total += np.polynomial.polynomial.polyval(fields[:, sites], table).sum(axis=1)
        return -self.geometry.volume_element * total


def build_action(
    covariance: CovarianceOperator, polynomial: InteractionPolynomial, region: Region | None = None
) -> WickAction:
    """Wick-order P at every site of Λ (default: the whole lattice)."""
    region = Region.full(covariance.geometry) if region is None else region
    if region.geometry != covariance.geometry:
        raise GeometryError("region and covariance live on different geometries")
    variances = covariance.variances[region.sites]
    order = np.argsort(variances, kind="stable")
    table_index = np.empty(len(region), dtype=np.int64)
    tables: list[np.ndarray] = []
    anchor = None
    for position in order:
        c = variances[position]
        if anchor is None or c - anchor > VARIANCE_DEDUP_TOL:
            anchor = c
            tables.append(polynomial.wick_ordered(c))
        table_index[position] = len(tables) - 1
    logger.debug("Wick action on %d sites uses %d distinct variance tables", len(region), len(tables))
    return WickAction(covariance, polynomial, region, tuple(tables), table_index)


def evaluate_action(action: WickAction, configuration) -> float:
    """U_Λ(φ) = −a^d Σ_{x∈Λ} :P(φ_x):_{c_x}."""
    configuration = action.geometry.check_field(configuration)
    return float(action.evaluate_batch(configuration[None, :])[0])


# --- Quadrature (tiny regions) ---


def _tensor_quadrature(action: WickAction, sites: np.ndarray, nodes: int, observables=()) -> tuple[float, list[float]]:
    """E_μ[e^U] and E_μ[O e^U] by tensor Gauss–Hermite in decorrelated coordinates.

    ``sites`` must contain Λ; φ on ``sites`` is N(0, C_ss) = L z with
    L = V diag(√eig) from the eigendecomposition of C_ss and z standard normal.
    """
    k = sites.size
    columns = np.stack([action.covariance.column(int(s)) for s in sites])
    block = columns[:, sites]
    eigenvalues, vectors = np.linalg.eigh(0.5 * (block + block.T))
    factor = vectors * np.sqrt(np.clip(eigenvalues, 0, None))
    x, w = gauss_hermite(nodes)
    positions = {int(s): i for i, s in enumerate(sites)}
    region_columns = np.array([positions[int(s)] for s in action.region.sites])

    total = 0.0
    weighted = [0.0] * len(observables)
    count = nodes**k
    for start in range(0, count, QUADRATURE_CHUNK):
        flat = np.arange(start, min(start + QUADRATURE_CHUNK, count))
        digits = np.stack(np.unravel_index(flat, (nodes,) * k), axis=1)
        z = x[digits]
        weight = np.prod(w[digits], axis=1)
        phi = z @ factor.T
        u = np.zeros(flat.size)
        if not action.polynomial.is_zero:
            for t, table in enumerate(action.tables):
                cols = region_columns[action.table_index == t]
                u += np.polynomial.polynomial.polyval(phi[:, cols], table).sum(axis=1)
            u *= -action.geometry.volume_element
        boltzmann = weight * np.exp(u)
        total += float(boltzmann.sum())
        for i, observable in enumerate(observables):
            weighted[i] += float(boltzmann @ observable(phi, positions))
    return total, weighted


def _quadrature_sites(action: WickAction, extra: Iterable[int] = ()) -> np.ndarray:
    sites = np.union1d(action.region.sites, np.asarray(list(extra), dtype=np.int64))
    if sites.size > QUADRATURE_MAX_SITES:
        raise BudgetError(f"tensor quadrature is limited to {QUADRATURE_MAX_SITES} sites, got {sites.size}")
    return sites


def partition_function_quadrature(action: WickAction, nodes: int = QUADRATURE_NODES) -> float:
    """Z_Λ by tensor Gauss–Hermite quadrature; |Λ| <= 6.

    The rule integrates the degree-<=8 polynomial U exactly, so the discrete
    Jensen inequality Σ w e^U >= e^{Σ w U} = 1 holds to rounding.
    """
    z, _ = _tensor_quadrature(action, _quadrature_sites(action), nodes)
    return z


# --- Monte Carlo over free samples ---


@dataclass(frozen=True)
class PartitionEstimate:
    z: float
    stderr: float
    samples: int
    seed: int
    log_z: float
    effective_samples: float
    overflow: bool

    @property
    def jensen_ok(self) -> bool:
        return self.z + 3 * self.stderr >= 1.0

    def to_dict(self) -> dict:
        return {
            "Z": self.z,
            "stderr": self.stderr,
            "log_Z": self.log_z,
            "samples": self.samples,
            "seed": self.seed,
            "effective_samples": self.effective_samples,
            "overflow": self.overflow,
            "jensen_ok": self.jensen_ok,
        }


def _free_action_samples(action: WickAction, samples: int, seed: int, sites: Sequence[int] = ()):
    us = []
    picks = []
    for batch in iter_field_batches(action.covariance, samples, seed):
        us.append(action.evaluate_batch(batch))
        picks.append(batch[:, list(sites)])
    if not us:
        return np.zeros(0), np.zeros((0, len(sites)))
    return np.concatenate(us), np.concatenate(picks)


def partition_function_mc(action: WickAction, samples: int = 100_000, seed: int = 0) -> PartitionEstimate:
    """Z_Λ ≈ mean of e^{U(φ)} over free samples, evaluated with a max-shift in log space."""
    if samples < 2:
        raise ValueError(f"need at least 2 samples, got {samples}")
    u, _ = _free_action_samples(action, samples, seed)
    shift = float(u.max())
    scaled = np.exp(u - shift)
    mean = float(scaled.mean())
    spread = float(scaled.std(ddof=1) / math.sqrt(samples))
    effective = float(scaled.sum() ** 2 / np.sum(scaled**2))
    log_z = shift + math.log(mean)
    overflow = log_z > 700
    if overflow:
        logger.warning("Z overflows double precision (log Z = %.1f); strong coupling, use log_Z", log_z)
    if effective < ESS_WARN_FRACTION * samples:
        logger.warning("partition function dominated by %.0f of %d samples", effective, samples)
    scale = math.exp(shift) if not overflow else float("inf")
    return PartitionEstimate(
        z=mean * scale,
        stderr=spread * scale,
        samples=samples,
        seed=seed,
        log_z=log_z,
        effective_samples=effective,
        overflow=overflow,
    )


# --- Schwinger functions ---


@dataclass(frozen=True)
class SchwingerEstimate:
    points: tuple[tuple[int, ...], ...]
    value: float
    stderr: float
    samples: int
    seed: int
    method: str
    metadata: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "value": self.value,
            "stderr": self.stderr,
            "samples": self.samples,
            "seed": self.seed,
            "method": self.method,
            **self.metadata,
        }


def _point_sites(action: WickAction, points: Sequence[Sequence[int]]) -> list[int]:
    return [action.geometry.index(p) for p in points]


def _coupling_metadata(action: WickAction) -> dict:
    return {
        "polynomial": list(action.polynomial.coefficients),
        "mass_inverse_length": action.covariance.mass,
        "spacing_length": action.geometry.spacing,
        "extents": list(action.geometry.extents),
        "boundary": action.geometry.boundary.value,
    }


def _reweight(action: WickAction, sites: list[int], samples: int, seed: int) -> tuple[float, float, float]:
    u, values = _free_action_samples(action, samples, seed, sites)
    observable = np.prod(values, axis=1) if sites else np.ones(u.size)
    weights = np.exp(u - u.max())
    effective = float(weights.sum() ** 2 / np.sum(weights**2))
    if effective < max(MIN_EFFECTIVE_SAMPLES, 1e-3 * samples):
        raise DegenerateWeightsError(
            f"reweighting collapsed to {effective:.1f} effective samples out of {samples}; "
            "use method='mcmc' for this coupling"
        )
    if effective < ESS_WARN_FRACTION * samples:
        logger.warning("reweighting keeps only %.0f of %d samples", effective, samples)
    blocks = min(JACKKNIFE_BLOCKS, samples)
    edges = np.linspace(0, samples, blocks + 1).astype(int)
    numerators = np.add.reduceat(weights * observable, edges[:-1])
    denominators = np.add.reduceat(weights, edges[:-1])
    value, error = jackknife(lambda num, den: num / den, numerators, denominators)
    return value, error, effective


def schwinger_function(
    action: WickAction,
    points: Sequence[Sequence[int]],
    method: str = "reweight",
    samples: int = 100_000,
    seed: int = 0,
    sweeps: int = 20_000,
    chains: int = 2,
    therm_frac: float = 0.2,
    nodes: int = QUADRATURE_NODES,
    workers: int = 1,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
) -> SchwingerEstimate:
    """S_Λ(x₁, …, x_n) = E_μ[φ(x₁)…φ(x_n) e^{U}] / E_μ[e^{U}].

    ``reweight`` weights free samples by e^{U}; ``mcmc`` samples dμ_Λ with
    local Metropolis; ``quadrature`` is exact for |Λ ∪ points| <= 6.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    points = tuple(tuple(int(c) for c in p) for p in points)
    sites = _point_sites(action, points)
    metadata = _coupling_metadata(action)

    if method == "quadrature":
        def product(phi, positions):
            return np.prod(phi[:, [positions[s] for s in sites]], axis=1) if sites else np.ones(phi.shape[0])

        z, (numerator,) = _tensor_quadrature(action, _quadrature_sites(action, sites), nodes, (product,))
        return SchwingerEstimate(points, numerator / z, 0.0, 0, seed, method, metadata)

    if method == "reweight":
        value, error, effective = _reweight(action, sites, samples, seed)
        metadata["effective_samples"] = effective
        return SchwingerEstimate(points, value, error, samples, seed, method, metadata)

    from euclid_qft.mc import run_chains

    result = run_chains(action, sweeps=sweeps, chains=chains, seed=seed, therm_frac=therm_frac,
                        observables=[points], workers=workers,
                        checkpoint_dir=checkpoint_dir, checkpoint_every=checkpoint_every)
    analysis = result.analyses[0]
    metadata.update({"r_hat": result.r_hat[0], "acceptance": result.acceptance, "plateau": analysis.plateau,
                     "tau_int": analysis.tau_int})
    return SchwingerEstimate(points, analysis.mean, analysis.stderr, analysis.n_samples, seed, method, metadata)


# --- Refinement and coupling scans ---


def action_variance(action: WickAction) -> float:
    """E_μ[U_Λ²] = a^{2d} Σ_{x,y∈Λ} Σ_n p_n² n! C(x,y)ⁿ, exactly."""
    if action.polynomial.is_zero:
        return 0.0
    sites = action.region.sites
    block = np.stack([action.covariance.column(int(s))[sites] for s in sites])
    total = 0.0
    for n, p in enumerate(action.polynomial.coefficients):
        if p:
            total += p * p * math.factorial(n) * float(np.sum(block**n))
    return action.geometry.volume_element**2 * total


@dataclass(frozen=True)
class VarianceRow:
    spacing: float
    sites: int
    variance: float


def action_variance_refinement(
    mass: float,
    physical_extent: float,
    spacings: Sequence[float],
    polynomial: InteractionPolynomial,
    dim: int = 2,
) -> list[VarianceRow]:
    """‖U_Λ‖²_{L²(μ)} at fixed physical box size under spacing refinement (periodic box)."""
    spacings = [float(a) for a in spacings]
    if any(b >= a for a, b in zip(spacings, spacings[1:])):
        raise ValueError(f"spacings must be strictly decreasing, got {spacings}")
    rows = []
    for a in spacings:
        n = physical_extent / a
        if abs(n - round(n)) > 1e-9:
            raise GeometryError(f"physical extent {physical_extent} is not commensurate with spacing {a}")
        geometry = make_geometry(dim, [int(round(n))] * dim, a, Boundary.PERIODIC)
        action = build_action(build_covariance(geometry, mass), polynomial)
        rows.append(VarianceRow(a, geometry.n_sites, action_variance(action)))
    return rows


@dataclass(frozen=True)
class CouplingScan:
    couplings: tuple[float, ...]
    estimates: tuple[SchwingerEstimate, ...]

    @property
    def values(self) -> list[float]:
        return [e.value for e in self.estimates]

    @property
    def direction(self) -> str:
        diffs = np.diff(self.values)
        if np.all(diffs > 0):
            return "increasing"
        if np.all(diffs < 0):
            return "decreasing"
        return "mixed"

    @property
    def monotone(self) -> bool:
        return self.direction != "mixed"


def coupling_scan(
    covariance: CovarianceOperator,
    points: Sequence[Sequence[int]],
    couplings: Sequence[float] = (0.0, 0.1, 0.2),
    samples: int = 100_000,
    seed: int = 0,
) -> CouplingScan:
    """Reweighted λφ⁴ Schwinger function at each λ on common random numbers."""
    estimates = []
    for lam in couplings:
        polynomial = InteractionPolynomial.quartic(lam) if lam else InteractionPolynomial.zero()
        action = build_action(covariance, polynomial)
        estimates.append(schwinger_function(action, points, "reweight", samples=samples, seed=seed))
    return CouplingScan(tuple(float(c) for c in couplings), tuple(estimates))
