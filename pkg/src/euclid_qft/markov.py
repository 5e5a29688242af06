"""One-particle Euclidean structure on the lattice.

N is the site space with the inner product ⟨f, g⟩_N = a^{2d} fᵀCg. This module
provides the N-orthogonal projections e_A onto vectors supported in a region,
the Markov property across a hyperplane (e_A e_B = e_σ), the time-slice
injections j_t: F → N, and the dilation semigroup p(t) = j₀* u(t) j₀ with the
one-particle energies it defines.

F, the one-particle space of a spatial slice, carries the norm induced by
j_t (``‖f‖_F = ‖j_t f‖_N``); the slice δ-function is represented as
``(1/a)·indicator`` so that ∫ f⊗δ_t g is a Riemann sum.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cg

from euclid_qft.covariance import MAX_DENSE_SITES, CovarianceOperator, axis_angles, laplacian_symbol
from euclid_qft.errors import ConvergenceError, GeometryError
from euclid_qft.lattice import Boundary, Reflection, Region, Translation, apply_isometry, split_by_hyperplane
from euclid_qft.rng import stream

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
CG_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class NProjection:
    """The ⟨·,·⟩_N-orthogonal projection e_A onto vectors supported in ``region``.

    e_A f is the g supported in A minimizing ‖f − g‖_N, i.e. the solution of
    C_AA g_A = (C f)_A. Solved by a dense Cholesky factorization up to
    MAX_DENSE_SITES sites and by conjugate gradients beyond.
    """

    covariance: CovarianceOperator
    region: Region

    @property
    def dense(self) -> bool:
        return self.covariance.geometry.n_sites <= MAX_DENSE_SITES

    @cached_property
    def _factor(self):
        sites = self.region.sites
        block = self.covariance.matrix[np.ix_(sites, sites)]
        condition = np.linalg.cond(block)
        if condition > CONDITION_LIMIT:
            raise ConvergenceError(
                f"restricted covariance on {len(sites)} sites is ill-conditioned (cond {condition:.3e})"
            )
        return scipy.linalg.cho_factor(block)

    def _solve_restricted(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            return scipy.linalg.cho_solve(self._factor, rhs)
        sites = self.region.sites
        n = self.covariance.geometry.n_sites

        def matvec(v):
            full = np.zeros(n)
            full[sites] = v
            return self.covariance.apply(full)[sites]

        operator = LinearOperator((len(sites), len(sites)), matvec=matvec, dtype=float)
        solution, info = cg(operator, rhs, rtol=CG_RTOL, maxiter=10 * len(sites))
        if info != 0:
            raise ConvergenceError(f"conjugate gradients did not converge on region of {len(sites)} sites")
        return solution

    def apply(self, f) -> np.ndarray:
        f = self.covariance.geometry.check_field(f)
        sites = self.region.sites
        out = np.zeros_like(f)
        if len(sites) == self.covariance.geometry.n_sites:
            return f.copy()
        out[sites] = self._solve_restricted(self.covariance.apply(f)[sites])
        return out

    __call__ = apply


def project(covariance: CovarianceOperator, region: Region) -> NProjection:
    """Build e_A for ``region`` (nonempty, on the covariance's geometry)."""
    if len(region) == 0:
        raise GeometryError("cannot project onto an empty region")
    if region.geometry != covariance.geometry:
        raise GeometryError("region and covariance live on different geometries")
    return NProjection(covariance, region)


def n_norm(covariance: CovarianceOperator, f) -> float:
    f = np.asarray(f, dtype=float)
    return math.sqrt(max(float(f @ covariance.apply(f)), 0.0)) * covariance.geometry.volume_element


def markov_check(covariance: CovarianceOperator, axis: int, plane: int, probes: int = 8, seed: int = 0) -> float:
    """Estimate ‖e_A e_B − e_σ‖ (and the same for e_B e_A) over random probes.

    A, B and σ come from :func:`split_by_hyperplane`. The N-operator norm is
    estimated as the largest ratio ‖R f‖_N / ‖f‖_N over ``probes`` Gaussian
    vectors.
    """
    a_region, b_region, sigma = split_by_hyperplane(covariance.geometry, axis, plane)
    e_a = project(covariance, a_region)
    e_b = project(covariance, b_region)
    e_sigma = project(covariance, sigma)
    rng = stream(seed, axis, plane)
    residual = 0.0
    for _ in range(probes):
        f = rng.standard_normal(covariance.geometry.n_sites)
        target = e_sigma(f)
        scale = n_norm(covariance, f)
        for difference in (e_a(e_b(f)) - target, e_b(e_a(f)) - target):
            residual = max(residual, n_norm(covariance, difference) / scale)
    logger.debug("markov residual axis=%d plane=%d: %.3e", axis, plane, residual)
    return residual


def conditional_covariance_check(covariance: CovarianceOperator, axis: int, plane: int) -> float:
    """max |Σ_{A'B'} − Σ_{A'σ} Σ_{σσ}⁻¹ Σ_{σB'}| with A' = A∖σ, B' = B∖σ, Σ = C.

    Zero iff the field on A' is conditionally independent of the field on B'
    given the field on σ. On a periodic axis a single plane does not separate
    the lattice, and the residual stays large.
    """
    a_region, b_region, sigma = split_by_hyperplane(covariance.geometry, axis, plane)
    a_open = a_region.difference(sigma).sites
    b_open = b_region.difference(sigma).sites
    if a_open.size == 0 or b_open.size == 0:
        return 0.0
    s = sigma.sites
    sigma_matrix = covariance.matrix
    schur = sigma_matrix[np.ix_(a_open, s)] @ np.linalg.solve(
        sigma_matrix[np.ix_(s, s)], sigma_matrix[np.ix_(s, b_open)]
    )
    return float(np.max(np.abs(sigma_matrix[np.ix_(a_open, b_open)] - schur)))


def markov_scan(covariance: CovarianceOperator, axis: int, probes: int = 8, seed: int = 0) -> list[dict]:
    """Both residuals for every interior plane along ``axis``."""
    rows = []
    for plane in range(1, covariance.geometry.extents[axis] - 1):
        rows.append(
            {
                "plane": plane,
                "residual_projection": markov_check(covariance, axis, plane, probes, seed),
                "residual_conditional": conditional_covariance_check(covariance, axis, plane),
            }
        )
    return rows


# --- Slice injections ---


@dataclass(frozen=True, eq=False)
class SliceInjection:
    """j_t: F → N, f ↦ f ⊗ δ_t, with its N-adjoint.

    The F inner product is the one induced by j_t itself, with Gram matrix
    ``metric = a^{2d-2} C_tt`` in the slice-site basis.
    """

    covariance: CovarianceOperator
    t: int

    def __post_init__(self):
        self.covariance.geometry.slice_sites(self.t)

    @cached_property
    def sites(self) -> np.ndarray:
        return self.covariance.geometry.slice_sites(self.t)

    @cached_property
    def _columns(self) -> np.ndarray:
        """C e_x for every x on the slice, shape (n_s, V)."""
        units = np.zeros((self.sites.size, self.covariance.geometry.n_sites))
        units[np.arange(self.sites.size), self.sites] = 1.0
        return self.covariance.apply(units)

    @cached_property
    def metric(self) -> np.ndarray:
        g = self.covariance.geometry
        block = self._columns[:, self.sites]
        return g.volume_element**2 / g.spacing**2 * 0.5 * (block + block.T)

    def __call__(self, f_slice) -> np.ndarray:
        f_slice = np.asarray(f_slice, dtype=float)
        if f_slice.shape != (self.sites.size,):
            raise GeometryError(f"slice vector has shape {f_slice.shape}, slice needs ({self.sites.size},)")
        out = np.zeros(self.covariance.geometry.n_sites)
        out[self.sites] = f_slice / self.covariance.geometry.spacing
        return out

    def adjoint(self, field) -> np.ndarray:
        """j_t*: the adjoint of j_t between ⟨·,·⟩_N and ⟨·,·⟩_F."""
        g = self.covariance.geometry
        field = g.check_field(field)
        rhs = g.volume_element**2 / g.spacing * self.covariance.apply(field)[self.sites]
        return np.linalg.solve(self.metric, rhs)


def inject(covariance: CovarianceOperator, t: int, f_slice) -> np.ndarray:
    return SliceInjection(covariance, t)(f_slice)


def adjoint_inject(covariance: CovarianceOperator, t: int, field) -> np.ndarray:
    return SliceInjection(covariance, t).adjoint(field)


def f_inner_product(covariance: CovarianceOperator, f, g, t: int = 0) -> float:
    """⟨f, g⟩_F = ⟨j_t f, j_t g⟩_N."""
    metric = SliceInjection(covariance, t).metric
    return float(np.asarray(f, dtype=float) @ metric @ np.asarray(g, dtype=float))


def slice_delta_norm(covariance: CovarianceOperator, site: int = 0) -> float:
    """‖δ_site ⊗ δ₀‖²_N: the F-norm of a slice delta (1/(2m) in the 1D continuum)."""
    injection = SliceInjection(covariance, 0)
    unit = np.zeros(injection.sites.size)
    unit[site] = 1.0
    return float(unit @ injection.metric @ unit)


def reflexivity_residual(covariance: CovarianceOperator, f_slice, seed: int = 0) -> float:
    """max of ‖r₀ j₀ f − j₀ f‖_∞ and ‖j₀* r₀ G − j₀* G‖_∞ over a random site vector G.

    r₀ is the time reflection through slice 0.
    """
    g = covariance.geometry
    mirror = Reflection(g.time_axis, 0)
    injection = SliceInjection(covariance, 0)
    lifted = injection(f_slice)
    first = np.max(np.abs(apply_isometry(g, mirror, lifted) - lifted))
    probe = stream(seed).standard_normal(g.n_sites)
    second = np.max(np.abs(injection.adjoint(apply_isometry(g, mirror, probe)) - injection.adjoint(probe)))
    return float(max(first, second))


def covariance_property_residual(covariance: CovarianceOperator, f_slice, s: int, t: int) -> float:
    """‖u(t) j_s f − j_{s+t} f‖_∞ with u(t) the time translation by t slices."""
    g = covariance.geometry
    extent = g.extents[g.time_axis]
    shifted = apply_isometry(g, Translation(g.time_axis, t), SliceInjection(covariance, s)(f_slice))
    return float(np.max(np.abs(shifted - SliceInjection(covariance, (s + t) % extent)(f_slice))))


# --- Dilation semigroup ---


def _require_periodic_time(covariance: CovarianceOperator) -> int:
    g = covariance.geometry
    if g.boundary is not Boundary.PERIODIC:
        raise GeometryError("the dilation semigroup needs a periodic (translation-invariant) time axis")
    return g.extents[g.time_axis]


def dilation_semigroup(covariance: CovarianceOperator, t: int) -> np.ndarray:
    """p(t) = j₀* u(t) j₀ in an F-orthonormal frame of the spatial slice.

    In slice-site coordinates p(t) = C₀₀⁻¹ C₀ₜ; conjugating by C₀₀^{1/2}
    gives the symmetric matrix C₀₀^{-1/2} C₀ₜ C₀₀^{-1/2} returned here. The
    time ring must be long against t: images around the ring contribute terms
    of order e^{−m a (L_t − 2t)}.
    """
    extent = _require_periodic_time(covariance)
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if 2 * t > extent:
        raise GeometryError(f"t = {t} exceeds half the periodic time extent {extent} (wrap-around)")
    g = covariance.geometry
    wrap = math.exp(-covariance.mass * g.spacing * (extent - 2 * t))
    if wrap > 1e-10:
        logger.warning("time extent %d limits p(%d) to ~%.1e by wrap-around images", extent, t, wrap)
    injection = SliceInjection(covariance, 0)
    columns = injection._columns
    c00 = columns[:, injection.sites]
    c0t = columns[:, g.slice_sites(t)]
    c00 = 0.5 * (c00 + c00.T)
    values, vectors = np.linalg.eigh(c00)
    inv_sqrt = (vectors / np.sqrt(values)) @ vectors.T
    return inv_sqrt @ c0t @ inv_sqrt


def semigroup_residuals(covariance: CovarianceOperator, times=(1, 2, 3)) -> dict:
    """Worst ‖p(s)p(t) − p(s+t)‖ and ‖p(t) − p(t)ᵀ‖ over s, t in ``times``."""
    cache = {}

    def p(n):
        if n not in cache:
            cache[n] = dilation_semigroup(covariance, n)
        return cache[n]

    semigroup = 0.0
    symmetry = 0.0
    identity = float(np.max(np.abs(p(0) - np.eye(p(0).shape[0]))))
    for s in times:
        symmetry = max(symmetry, float(np.max(np.abs(p(s) - p(s).T))))
        for t in times:
            semigroup = max(semigroup, float(np.linalg.norm(p(s) @ p(t) - p(s + t), 2)))
    return {"semigroup": semigroup, "symmetry": symmetry, "identity": identity}


# --- One-particle energies ---


def _plane_waves(extent: int) -> np.ndarray:
    x = np.arange(extent)
    return np.exp(1j * np.outer(x, axis_angles(extent, Boundary.PERIODIC))) / math.sqrt(extent)


@dataclass(frozen=True)
class OneParticleSpectrum:
    """ω_lat per spatial mode; ``angles`` holds θ = a·k for each mode and axis."""

    spacing: float
    mass: float
    angles: np.ndarray
    omega: np.ndarray

    @property
    def momenta(self) -> np.ndarray:
        return self.angles / self.spacing

    @property
    def m_eff(self) -> float:
        return float(self.omega.min())

    def closed_form(self) -> np.ndarray:
        """cosh(aω) = 1 + a²(ω̂²(k) + m²)/2, the infinite-time lattice dispersion."""
        a = self.spacing
        spatial = laplacian_symbol(self.angles, a).sum(axis=1) if self.angles.size else np.zeros(len(self.omega))
        return np.arccosh(1 + a * a * (spatial + self.mass**2) / 2) / a

    def continuum(self) -> np.ndarray:
        """ω(k) = √(k² + m²)."""
        k2 = (self.momenta**2).sum(axis=1) if self.angles.size else np.zeros(len(self.omega))
        return np.sqrt(k2 + self.mass**2)


def one_particle_hamiltonian(covariance: CovarianceOperator) -> OneParticleSpectrum:
    """ω_lat = −log(eigenvalue of p(1))/a for every spatial eigenmode.

    p(1) commutes with spatial translations, so the plane waves of the slice
    diagonalize it; each mode's eigenvalue is read off as its Rayleigh quotient.
    """
    g = covariance.geometry
    p1 = dilation_semigroup(covariance, 1)
    spatial_extents = g.extents[: g.time_axis]
    if spatial_extents:
        modes = np.ones((1, 1), dtype=complex)
        for extent in spatial_extents:
            modes = np.kron(modes, _plane_waves(extent))
        grids = np.meshgrid(*[axis_angles(e, Boundary.PERIODIC) for e in spatial_extents], indexing="ij")
        angles = np.stack([grid.reshape(-1) for grid in grids], axis=1)
        eigenvalues = np.einsum("xk,xy,yk->k", modes.conj(), p1, modes).real
    else:
        angles = np.zeros((1, 0))
        eigenvalues = np.array([p1[0, 0]])
    if np.any(eigenvalues <= 0):
        raise ConvergenceError(f"p(1) has a nonpositive eigenvalue {eigenvalues.min():.3e}")
    omega = -np.log(eigenvalues) / g.spacing
    return OneParticleSpectrum(spacing=g.spacing, mass=covariance.mass, angles=angles, omega=omega)
