"""Free lattice propagator, continuum reference kernels and the N-space inner product.

Normalization: the free lattice action is ``S = ½ a^d φᵀ (−Δ_lat + m²) φ``, so
the lattice Schwinger function is

    C = (−Δ_lat + m²)⁻¹ / a^d,

whose entries converge to the continuum kernel S(x − y) as a → 0 with no
further factors. Fourier conventions follow the continuum theory: the inverse
transform carries (2π)^d, so that in one dimension

    S(x) = (2π)⁻¹ ∫ e^{ipx} / (p² + m²) dp = e^{−m|x|} / (2m),

which is the "magic formula" ∫ e^{ipx}/(p²+M²) dp = (π/M) e^{−M|x|} divided by 2π.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse
from scipy.integrate import quad

from euclid_qft.errors import BudgetError, GeometryError
from euclid_qft.lattice import Boundary, LatticeGeometry, make_geometry

logger = logging.getLogger(__name__)

STENCILS = ("nearest", "next-nearest")
NEXT_NEAREST_WEIGHT = 1.0
MAX_DENSE_SITES = 4096
CONTINUUM_RTOL = 1e-10


def axis_angles(extent: int, boundary: Boundary) -> np.ndarray:
    """Dimensionless momenta θ = a·k of the per-axis eigenmodes, in transform order.

    Periodic: plane waves θ = 2πn/L (``fft`` order). Dirichlet: sine modes
    θ = πn/(L+1), n = 1..L (``dst`` type I order).
    """
    if boundary is Boundary.PERIODIC:
        return 2 * np.pi * np.arange(extent) / extent
    return np.pi * np.arange(1, extent + 1) / (extent + 1)


def laplacian_symbol(theta, spacing: float) -> np.ndarray:
    """Nearest-neighbour stencil ω̂²(k) = (4/a²) sin²(a k / 2) for θ = a k."""
    return 4.0 / spacing**2 * np.sin(np.asarray(theta) / 2) ** 2


@dataclass(frozen=True, eq=False)
class CovarianceOperator:
    """The operator C = (−Δ_lat + m²)⁻¹ / a^d on one geometry.

    With the nearest-neighbour stencil C is applied spectrally: FFT for periodic
    lattices, type-I DST (the Dirichlet sine modes) otherwise, at O(V log V).
    The ``next-nearest`` stencil, kept as a non-local negative control for the
    Markov property, falls back to a dense Cholesky solve.
    """

    geometry: LatticeGeometry
    mass: float
    stencil: str = "nearest"

    @property
    def spectral(self) -> bool:
        return self.stencil == "nearest"

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues ω̂²(k) + m² of −Δ_lat + m², shaped like ``geometry.extents``."""
        if not self.spectral:
            raise GeometryError("closed-form eigenvalues exist only for the nearest-neighbour stencil")
        g = self.geometry
        total = np.full(g.extents, self.mass**2)
        for axis, extent in enumerate(g.extents):
            shape = [1] * g.dim
            shape[axis] = extent
            total = total + laplacian_symbol(axis_angles(extent, g.boundary), g.spacing).reshape(shape)
        return total

    @cached_property
    def precision(self) -> scipy.sparse.csr_matrix:
        """Sparse a^d (−Δ_lat + m²), the inverse of C, built in real space."""
        g = self.geometry
        a2 = g.spacing**2
        couplings = [(1, 1.0)]
        if self.stencil == "next-nearest":
            couplings.append((2, NEXT_NEAREST_WEIGHT))
        coords = g.coordinates
        n = g.n_sites
        diagonal = self.mass**2 + g.dim * sum(2 * w / a2 for _, w in couplings)
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        vals = [np.full(n, diagonal)]
        for axis, extent in enumerate(g.extents):
            for step, weight in couplings:
                for sign in (1, -1):
                    target = coords[:, axis] + sign * step
                    if g.boundary is Boundary.PERIODIC:
                        target = target % extent
                        valid = np.ones(n, dtype=bool)
                    else:
                        valid = (target >= 0) & (target < extent)
                    moved = coords[valid].copy()
                    moved[:, axis] = target[valid]
                    rows.append(np.flatnonzero(valid))
                    cols.append(np.ravel_multi_index(moved.T, g.extents))
                    vals.append(np.full(int(valid.sum()), -weight / a2))
        k = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
        return k * g.volume_element

    @cached_property
    def _cholesky(self):
        self._require_dense()
        return scipy.linalg.cho_factor(self.precision.toarray())

    def _require_dense(self) -> None:
        if self.geometry.n_sites > MAX_DENSE_SITES:
            raise BudgetError(
                f"dense covariance limited to {MAX_DENSE_SITES} sites, geometry has {self.geometry.n_sites}"
            )

    def _spectral_apply(self, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
        g = self.geometry
        batch = values.shape[:-1]
        grid = values.reshape(batch + g.extents)
        axes = tuple(range(len(batch), len(batch) + g.dim))
        if g.boundary is Boundary.PERIODIC:
            out = scipy.fft.ifftn(scipy.fft.fftn(grid, axes=axes) * multiplier, axes=axes).real
        else:
            out = scipy.fft.dstn(scipy.fft.dstn(grid, type=1, axes=axes, norm="ortho") * multiplier,
                                 type=1, axes=axes, norm="ortho")
        return out.reshape(values.shape)

    def _check(self, f) -> np.ndarray:
        values = np.asarray(f, dtype=float)
        if values.shape[-1:] != (self.geometry.n_sites,):
            raise GeometryError(
                f"vector has trailing dimension {values.shape[-1:]}, geometry needs {self.geometry.n_sites}"
            )
        return values

    def apply(self, f) -> np.ndarray:
        """C f for a site vector (or a batch of them along the last axis)."""
        values = self._check(f)
        if self.spectral:
            return self._spectral_apply(values, 1.0 / (self.eigenvalues * self.geometry.volume_element))
        return scipy.linalg.cho_solve(self._cholesky, values.T).T

    def apply_sqrt(self, f) -> np.ndarray:
        """C^{1/2} f; the symmetric square root (Cholesky factor off the spectral path)."""
        values = self._check(f)
        if self.spectral:
            return self._spectral_apply(values, 1.0 / np.sqrt(self.eigenvalues * self.geometry.volume_element))
        factor = scipy.linalg.cholesky(self.matrix, lower=True)
        return values @ factor.T

    def apply_precision(self, f) -> np.ndarray:
        values = self._check(f)
        return (self.precision @ values.T).T

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense C (V × V); only for V <= MAX_DENSE_SITES."""
        self._require_dense()
        dense = self.apply(np.eye(self.geometry.n_sites))
        dense = 0.5 * (dense + dense.T)
        dense.setflags(write=False)
        return dense

    def column(self, y: int) -> np.ndarray:
        if "matrix" in self.__dict__:
            return self.matrix[:, y].copy()
        unit = np.zeros(self.geometry.n_sites)
        unit[y] = 1.0
        return self.apply(unit)

    def entry(self, x: int, y: int) -> float:
        return float(self.column(y)[x])

    @cached_property
    def variances(self) -> np.ndarray:
        """Diagonal C(x, x): the per-site Wick variance."""
        g = self.geometry
        if self.spectral:
            if g.boundary is Boundary.PERIODIC:
                value = float(np.mean(1.0 / (self.eigenvalues * g.volume_element)))
                return np.full(g.n_sites, value)
            # Dirichlet: C(x,x) = Σ_k u_k(x)² / λ_k with separable sine modes
            diag = np.zeros(g.extents)
            modes = []
            for extent in g.extents:
                j = np.arange(extent)
                n = np.arange(1, extent + 1)
                u = np.sqrt(2.0 / (extent + 1)) * np.sin(np.pi * np.outer(j + 1, n) / (extent + 1))
                modes.append(u**2)
            inv = 1.0 / (self.eigenvalues * g.volume_element)
            diag = inv
            for axis, sq in enumerate(modes):
                diag = np.moveaxis(np.tensordot(sq, diag, axes=([1], [axis])), 0, axis)
            return diag.reshape(-1)
        return np.diag(self.matrix).copy()

    def equation_residual(self) -> float:
        """max_x ‖a^d (−Δ_lat + m²) C e_x − e_x‖_∞, the lattice form of (−Δ+m²)S = δ."""
        product = self.precision @ self.matrix
        return float(np.max(np.abs(product - np.eye(self.geometry.n_sites))))


def build_covariance(geometry: LatticeGeometry, mass: float, stencil: str = "nearest") -> CovarianceOperator:
    """Build the free covariance of mass ``mass`` on ``geometry``."""
    if not mass > 0:
        raise ValueError(f"mass must be > 0, got {mass}")
    if stencil not in STENCILS:
        raise ValueError(f"stencil must be one of {STENCILS}, got {stencil!r}")
    return CovarianceOperator(geometry=geometry, mass=float(mass), stencil=stencil)


def n_inner_product(covariance: CovarianceOperator, f, g, geometry: LatticeGeometry | None = None) -> float:
    """⟨f, g⟩_N = ∫∫ f(x) S(x−y) g(y) dx dy as the Riemann sum a^{2d} fᵀ C g.

    Site vectors carry no lattice of their own; pass the ``geometry`` they were
    built on to have it checked against the covariance lattice, not only their length.
    """
    if geometry is not None and geometry != covariance.geometry:
        raise GeometryError(f"fields live on {geometry}, the covariance on {covariance.geometry}")
    geometry = covariance.geometry
    f = geometry.check_field(f)
    g = geometry.check_field(g)
    return float(geometry.volume_element**2 * f @ covariance.apply(g))


def infinite_volume_variance(mass: float, spacing: float, dim: int = 2) -> float:
    """Site variance C(x, x) of the infinite lattice.

    Evaluated as C(0, 0) of a periodic lattice large enough that wrap-around
    corrections (of order e^{−m L a}) fall below double precision.
    """
    extent = int(min(max(64, math.ceil(40.0 / (mass * spacing))), 4096 if dim == 1 else 1024))
    theta = axis_angles(extent, Boundary.PERIODIC)
    symbol = laplacian_symbol(theta, spacing)
    total = np.full((extent,) * dim, mass**2)
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = extent
        total = total + symbol.reshape(shape)
    return float(np.mean(1.0 / total) / spacing**dim)


# --- Continuum reference kernels ---


def magic_formula(x: float, M: float) -> float:
    """∫ e^{ipx} / (p² + M²) dp = (π/M) e^{−Mx} for x >= 0, M > 0."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if not M > 0:
        raise ValueError(f"M must be > 0, got {M}")
    return math.pi / M * math.exp(-M * x)


def magic_formula_quadrature(x: float, M: float) -> float:
    """Left side of the magic formula by adaptive Fourier quadrature (QAWF)."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if not M > 0:
        raise ValueError(f"M must be > 0, got {M}")
    integrand = lambda p: 1.0 / (p * p + M * M)  # noqa: E731
    if x == 0:
        value, _ = quad(integrand, 0, np.inf, epsabs=0, epsrel=1e-13)
    else:
        value, _ = quad(integrand, 0, np.inf, weight="cos", wvar=x, epsabs=1e-14, limlst=200)
    return 2.0 * value


def continuum_schwinger(x, mass: float, dim: int) -> float:
    """Continuum two-point function S(x) of mass ``mass`` in 1 or 2 dimensions.

    dim 1: e^{−m|x|}/(2m). dim 2: the angular integral of the Fourier
    representation (2π)⁻² ∫ e^{ipx}/(p²+m²) d²p leaves a Bessel-type integral,
    evaluated here in its non-oscillating form (2π)⁻¹ ∫₀^∞ e^{−m r cosh u} du.
    """
    if not mass > 0:
        raise ValueError(f"mass must be > 0, got {mass}")
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    if dim == 1:
        return math.exp(-mass * r) / (2 * mass)
    if dim != 2:
        raise ValueError(f"continuum kernel is provided for dim 1 and 2, got {dim}")
    if r == 0:
        raise ValueError("the two-dimensional kernel is singular at x = 0")
    z = mass * r
    upper = math.acosh(max(2.0, 800.0 / z))
    value, _ = quad(lambda u: math.exp(-z * math.cosh(u)), 0, upper, epsabs=0, epsrel=CONTINUUM_RTOL, limit=200)
    return value / (2 * math.pi)


def continuum_decay_rate(mass: float, dim: int = 2, r_min: float | None = None, r_max: float | None = None,
                         points: int = 11) -> float:
    """Exponential decay rate of S(r) fitted on [r_min, r_max] (default [5, 10]/m).

    The known power prefactor r^{−(d−1)/2} is divided out first, so the fit
    returns the mass itself up to O(1/r²) corrections.
    """
    r_min = 5.0 / mass if r_min is None else r_min
    r_max = 10.0 / mass if r_max is None else r_max
    r = np.linspace(r_min, r_max, points)
    y = np.log([continuum_schwinger(ri, mass, dim) * ri ** ((dim - 1) / 2) for ri in r])
    slope = np.polyfit(r, y, 1)[0]
    return float(-slope)


# --- Lattice vs continuum ---


@dataclass(frozen=True)
class RefinementRow:
    spacing: float
    lattice: float
    continuum: float
    abs_error: float


@dataclass(frozen=True)
class RefinementTable:
    mass: float
    separation: float
    dim: int
    rows: tuple[RefinementRow, ...]

    @property
    def monotone(self) -> bool:
        """Errors strictly decrease with the spacing, up to a 1e−12 noise floor."""
        errors = [row.abs_error for row in self.rows]
        return all(b < a or b < 1e-12 for a, b in zip(errors, errors[1:]))


def _lattice_count(length: float, spacing: float, what: str) -> int:
    n = length / spacing
    if abs(n - round(n)) > 1e-9:
        raise GeometryError(f"{what} {length} is not commensurate with spacing {spacing}")
    return int(round(n))


def lattice_vs_continuum_refinement(
    mass: float,
    physical_extent: float,
    spacings: Sequence[float],
    separation: float = 2.0,
    dim: int = 1,
) -> RefinementTable:
    """Compare C_lat(x, 0) with S_cont(x) at fixed physical x over decreasing spacings.

    The lattice side is periodic with side ``physical_extent``; choose it large
    against 1/m so that images stay below the reported errors.
    """
    spacings = [float(a) for a in spacings]
    if any(b >= a for a, b in zip(spacings, spacings[1:])):
        raise ValueError(f"spacings must be strictly decreasing, got {spacings}")
    if dim == 2 and separation == 0:
        raise ValueError("separation 0 is excluded in dim 2 (singular kernel)")
    continuum = continuum_schwinger(separation, mass, dim)
    rows = []
    for a in spacings:
        extent = _lattice_count(physical_extent, a, "physical extent")
        steps = _lattice_count(separation, a, "separation")
        geometry = make_geometry(dim, [extent] * dim, a, Boundary.PERIODIC)
        covariance = build_covariance(geometry, mass)
        target = geometry.index([steps] + [0] * (dim - 1))
        value = covariance.column(0)[target]
        rows.append(RefinementRow(a, float(value), continuum, abs(float(value) - continuum)))
        logger.debug("refinement a=%g lattice=%.12g continuum=%.12g", a, value, continuum)
    return RefinementTable(mass=mass, separation=separation, dim=dim, rows=tuple(rows))


def propagator_table(covariance: CovarianceOperator, axis: int = 0) -> list[dict]:
    """Rows (x, C(0, x), S_cont(x)) along ``axis`` up to half the extent."""
    g = covariance.geometry
    column = covariance.column(0)
    start = 0 if g.dim == 1 else 1
    rows = []
    for n in range(start, g.extents[axis] // 2 + 1):
        coords = [0] * g.dim
        coords[axis] = n
        x = n * g.spacing
        continuum = continuum_schwinger(x, covariance.mass, g.dim) if g.dim in (1, 2) else None
        rows.append({"x_length": x, "lattice": float(column[g.index(coords)]), "continuum": continuum})
    return rows
