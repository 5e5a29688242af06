"""Finite hypercubic lattices: geometry, regions, hyperplane splits and isometries.

Site indexing is row-major over the axes (x1, ..., xd): the site with
coordinates ``(c1, ..., cd)`` has index ``((c1 * e2 + c2) * e3 + c3) ...``,
i.e. ``numpy.ravel_multi_index(coords, extents)``. A field configuration is a
float array of length ``n_sites`` in that order; ``field.reshape(extents)``
gives the array view ``phi[c1, ..., cd]``. The last axis is the Euclidean time
axis wherever time slices are involved.

Dirichlet boundary means the field is pinned to 0 on the (absent) sites just
outside the lattice; periodic boundary wraps every axis.
"""

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from euclid_qft.errors import GeometryError

MAX_SITES = 2**31 - 1
ALLOWED_DIMS = (1, 2, 4)


class Boundary(str, Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class LatticeGeometry:
    """Immutable description of a hypercubic lattice.

    Build through :func:`make_geometry`, which validates the fields.
    """

    dim: int
    extents: tuple[int, ...]
    spacing: float
    boundary: Boundary

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def time_axis(self) -> int:
        return self.dim - 1

    @property
    def volume_element(self) -> float:
        """a^d, the Riemann-sum weight of one site."""
        return self.spacing**self.dim

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(n_sites, dim) integer coordinates in site order."""
        grids = np.indices(self.extents).reshape(self.dim, -1).T
        grids.setflags(write=False)
        return grids

    def index(self, coords: Iterable[int]) -> int:
        coords = tuple(int(c) for c in coords)
        if len(coords) != self.dim:
            raise GeometryError(f"expected {self.dim} coordinates, got {len(coords)}")
        for axis, (c, extent) in enumerate(zip(coords, self.extents)):
            if not 0 <= c < extent:
                raise GeometryError(f"coordinate {c} out of range on axis {axis} (extent {extent})")
        return int(np.ravel_multi_index(coords, self.extents))

    def coords(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_sites:
            raise GeometryError(f"site index {index} out of range (n_sites {self.n_sites})")
        return tuple(int(c) for c in np.unravel_index(index, self.extents))

    def neighbor(self, index: int, axis: int, step: int) -> int | None:
        """Site reached from ``index`` by ``step`` sites along ``axis``.

        Returns None when the step leaves a Dirichlet lattice.
        """
        coords = list(self.coords(index))
        extent = self.extents[axis]
        target = coords[axis] + step
        if self.boundary is Boundary.PERIODIC:
            target %= extent
        elif not 0 <= target < extent:
            return None
        coords[axis] = target
        return int(np.ravel_multi_index(coords, self.extents))

    def slice_sites(self, t: int) -> np.ndarray:
        """Sites of the spatial slice with time coordinate ``t``."""
        if not 0 <= t < self.extents[self.time_axis]:
            raise GeometryError(f"slice index {t} out of range (time extent {self.extents[self.time_axis]})")
        return np.flatnonzero(self.coordinates[:, self.time_axis] == t)

    def check_field(self, field) -> np.ndarray:
        """Return ``field`` as a float array, rejecting vectors of the wrong length."""
        values = np.asarray(field, dtype=float)
        if values.shape != (self.n_sites,):
            raise GeometryError(f"field has shape {values.shape}, geometry needs ({self.n_sites},)")
        return values


def make_geometry(
    dim: int,
    extents: Iterable[int],
    spacing: float,
    boundary: Boundary | str = Boundary.PERIODIC,
) -> LatticeGeometry:
    """Validate and build a :class:`LatticeGeometry`.

    Args:
        dim: 1 or 2 for production lattices, 4 for kernel checks.
        extents: sites per axis, each >= 2.
        spacing: lattice constant a > 0.
        boundary: ``"periodic"`` or ``"dirichlet"``.
    """
    if dim not in ALLOWED_DIMS:
        raise GeometryError(f"dim must be one of {ALLOWED_DIMS}, got {dim}")
    extents = tuple(int(e) for e in extents)
    if len(extents) != dim:
        raise GeometryError(f"expected {dim} extents, got {len(extents)}")
    if any(e < 2 for e in extents):
        raise GeometryError(f"every extent must be >= 2, got {extents}")
    if not spacing > 0:
        raise GeometryError(f"spacing must be > 0, got {spacing}")
    total = 1
    for e in extents:
        total *= e
    if total > MAX_SITES:
        raise GeometryError(f"site count {total} overflows the addressable maximum {MAX_SITES}")
    try:
        boundary = Boundary(boundary)
    except ValueError:
        raise GeometryError(f"boundary must be 'periodic' or 'dirichlet', got {boundary!r}") from None
    return LatticeGeometry(dim=dim, extents=extents, spacing=float(spacing), boundary=boundary)


def geometry_to_config(geometry: LatticeGeometry) -> dict[str, str]:
    """Serialize to the ``[geometry]`` block of a run config."""
    return {
        "dim": str(geometry.dim),
        "extents": ", ".join(str(e) for e in geometry.extents),
        "spacing_length": repr(geometry.spacing),
        "boundary": geometry.boundary.value,
    }


def geometry_from_config(block: Mapping[str, str]) -> LatticeGeometry:
    """Inverse of :func:`geometry_to_config`."""
    missing = [k for k in ("dim", "extents", "spacing_length", "boundary") if k not in block]
    if missing:
        raise GeometryError(f"geometry block is missing: {', '.join(missing)}")
    try:
        dim = int(block["dim"])
        extents = [int(e) for e in block["extents"].split(",") if e.strip()]
        spacing = float(block["spacing_length"])
    except ValueError as e:
        raise GeometryError(f"geometry block is malformed: {e}") from None
    return make_geometry(dim, extents, spacing, block["boundary"].strip().lower())


# --- Regions ---


@dataclass(frozen=True, eq=False)
class Region:
    """A set of sites of one geometry, stored as a sorted read-only index array."""

    geometry: LatticeGeometry
    sites: np.ndarray

    @classmethod
    def from_sites(cls, geometry: LatticeGeometry, sites: Iterable[int]) -> "Region":
        arr = np.unique(np.asarray(list(sites), dtype=np.int64))
        if arr.size and (arr[0] < 0 or arr[-1] >= geometry.n_sites):
            raise GeometryError(f"region sites must lie in [0, {geometry.n_sites})")
        arr.setflags(write=False)
        return cls(geometry, arr)

    @classmethod
    def full(cls, geometry: LatticeGeometry) -> "Region":
        return cls.from_sites(geometry, range(geometry.n_sites))

    @classmethod
    def from_mask(cls, geometry: LatticeGeometry, mask: np.ndarray) -> "Region":
        return cls.from_sites(geometry, np.flatnonzero(mask))

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.geometry.n_sites, dtype=bool)
        m[self.sites] = True
        return m

    def __len__(self) -> int:
        return int(self.sites.size)

    def __contains__(self, site: int) -> bool:
        i = np.searchsorted(self.sites, site)
        return bool(i < self.sites.size and self.sites[i] == site)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.sites, other.sites)

    def __hash__(self) -> int:
        return hash((self.geometry, self.sites.tobytes()))

    def _same_geometry(self, other: "Region") -> None:
        if self.geometry != other.geometry:
            raise GeometryError("regions live on different geometries")

    def union(self, other: "Region") -> "Region":
        self._same_geometry(other)
        return Region.from_sites(self.geometry, np.union1d(self.sites, other.sites))

    def intersection(self, other: "Region") -> "Region":
        self._same_geometry(other)
        return Region.from_sites(self.geometry, np.intersect1d(self.sites, other.sites))

    def difference(self, other: "Region") -> "Region":
        self._same_geometry(other)
        return Region.from_sites(self.geometry, np.setdiff1d(self.sites, other.sites))


def box_region(geometry: LatticeGeometry, lower: Iterable[int], upper: Iterable[int]) -> Region:
    """Sites with ``lower[i] <= coordinate[i] <= upper[i]`` on every axis."""
    lower = np.asarray(list(lower), dtype=int)
    upper = np.asarray(list(upper), dtype=int)
    if lower.shape != (geometry.dim,) or upper.shape != (geometry.dim,):
        raise GeometryError(f"box corners need {geometry.dim} coordinates")
    c = geometry.coordinates
    inside = np.all((c >= lower) & (c <= upper), axis=1)
    return Region.from_mask(geometry, inside)


def split_by_hyperplane(geometry: LatticeGeometry, axis: int, plane: int) -> tuple[Region, Region, Region]:
    """Split the lattice by the coordinate plane ``x[axis] == plane``.

    Returns ``(A, B, sigma)`` with A the sites at or below the plane, B the
    sites at or above it, and sigma the plane itself, so that A ∪ B is the
    whole lattice and A ∩ B = sigma.
    """
    if not 0 <= axis < geometry.dim:
        raise GeometryError(f"axis {axis} out of range for dim {geometry.dim}")
    if not 0 <= plane < geometry.extents[axis]:
        raise GeometryError(f"plane {plane} out of range on axis {axis} (extent {geometry.extents[axis]})")
    column = geometry.coordinates[:, axis]
    return (
        Region.from_mask(geometry, column <= plane),
        Region.from_mask(geometry, column >= plane),
        Region.from_mask(geometry, column == plane),
    )


# --- Isometries ---


@dataclass(frozen=True)
class Translation:
    axis: int
    offset: int


@dataclass(frozen=True)
class Reflection:
    """Mirror ``x[axis] -> 2 * plane - x[axis]``; plane may be a half-integer (bond plane)."""

    axis: int
    plane: float


IsometryElement = Translation | Reflection


def inverse(element: IsometryElement) -> IsometryElement:
    if isinstance(element, Translation):
        return Translation(element.axis, -element.offset)
    return element


def site_map(geometry: LatticeGeometry, element: IsometryElement) -> np.ndarray:
    """Permutation ``perm`` with ``perm[x]`` the image of site x under ``element``."""
    axis = element.axis
    if not 0 <= axis < geometry.dim:
        raise GeometryError(f"axis {axis} out of range for dim {geometry.dim}")
    extent = geometry.extents[axis]
    coords = geometry.coordinates.copy()
    periodic = geometry.boundary is Boundary.PERIODIC

    if isinstance(element, Translation):
        if not periodic and element.offset != 0:
            raise GeometryError("translations are not bijective under Dirichlet boundary")
        coords[:, axis] = (coords[:, axis] + element.offset) % extent
    else:
        twice = 2 * element.plane
        if abs(twice - round(twice)) > 1e-12:
            raise GeometryError(f"reflection plane must be an integer or half-integer, got {element.plane}")
        twice = int(round(twice))
        if periodic:
            coords[:, axis] = (twice - coords[:, axis]) % extent
        else:
            if twice != extent - 1:
                raise GeometryError(
                    f"under Dirichlet boundary only the centre plane {(extent - 1) / 2} is symmetric, "
                    f"got {element.plane}"
                )
            coords[:, axis] = twice - coords[:, axis]
    return np.ravel_multi_index(coords.T, geometry.extents)


def apply_isometry(geometry: LatticeGeometry, element: IsometryElement, field) -> np.ndarray:
    """Return ``g·phi`` with ``(g·phi)(x) = phi(g⁻¹ x)``."""
    values = geometry.check_field(field)
    out = np.empty_like(values)
    out[site_map(geometry, element)] = values
    return out
