"""MCP server exposing desk-scale lattice computations and the run archive to LLMs."""

import json
import math

from mcp.server.fastmcp import FastMCP

from euclid_qft.covariance import build_covariance, propagator_table
from euclid_qft.db import get_connection, get_db_path, list_runs
from euclid_qft.errors import EuclidError
from euclid_qft.gaussian import HAFNIAN_MAX_ORDER, hafnian
from euclid_qft.interaction import (
    QUADRATURE_MAX_SITES,
    InteractionPolynomial,
    build_action,
    partition_function_mc,
    partition_function_quadrature,
)
from euclid_qft.lattice import Boundary, make_geometry
from euclid_qft.markov import conditional_covariance_check, markov_check
from euclid_qft.transfer import build_transfer, ground_state, nelson_symmetry_check

mcp = FastMCP("euclid-qft")

_conn = None

MAX_SITES = 1024
MAX_SAMPLES = 200_000
MAX_LIST = 100


def _get_conn():
    global _conn
    if _conn is None:
        _conn = get_connection()
    return _conn


def _validate_model(mass: float, spacing: float = 1.0) -> str | None:
    """Validate mass and spacing. Returns an error message or None if valid."""
    if not (math.isfinite(mass) and mass > 0):
        return "Error: mass must be a positive number."
    if not (math.isfinite(spacing) and spacing > 0):
        return "Error: spacing must be a positive number."
    return None


def _validate_extents(extents: list[int]) -> str | None:
    if not extents or len(extents) not in (1, 2):
        return "Error: extents must list 1 or 2 sizes."
    if any(e < 2 for e in extents):
        return "Error: every extent must be at least 2."
    if math.prod(extents) > MAX_SITES:
        return f"Error: lattice too large (max {MAX_SITES} sites)."
    return None


def _polynomial(coefficients: list[float] | None) -> InteractionPolynomial | str:
    try:
        return InteractionPolynomial.from_coefficients(coefficients or [])
    except ValueError as e:
        return f"Error: invalid polynomial: {e}"


@mcp.tool()
def hafnian_of(matrix: list[list[float]]) -> str:
    """Hafnian of a symmetric matrix: the sum over perfect matchings of pair products.

    For a Gram matrix of covariances [u_i u_j] this is the Gaussian moment
    E[φ(u₁)…φ(u_n)].

    Args:
        matrix: Symmetric square matrix as a list of rows (order <= 24; odd order gives 0)
    """
    if not matrix or any(len(row) != len(matrix) for row in matrix):
        return "Error: matrix must be a non-empty square list of rows."
    if len(matrix) > HAFNIAN_MAX_ORDER:
        return f"Error: matrix too large (max order {HAFNIAN_MAX_ORDER})."
    try:
        value = hafnian(matrix)
    except (EuclidError, ValueError) as e:
        return f"Error: {e}"
    return f"hafnian (order {len(matrix)}) = {value:.15g}"


@mcp.tool()
def lattice_propagator(extents: list[int], mass: float, spacing: float = 1.0, boundary: str = "periodic") -> str:
    """Lattice two-point function C(0, x) along the first axis, next to the continuum kernel.

    Args:
        extents: Sites per axis, 1 or 2 entries (e.g. [64] or [32, 32])
        mass: Mass m > 0 in inverse length units
        spacing: Lattice spacing a > 0
        boundary: "periodic" or "dirichlet"
    """
    if err := _validate_extents(extents) or _validate_model(mass, spacing):
        return err
    if boundary not in (b.value for b in Boundary):
        return "Error: boundary must be 'periodic' or 'dirichlet'."
    try:
        covariance = build_covariance(make_geometry(len(extents), extents, spacing, boundary), mass)
        rows = propagator_table(covariance, axis=0)
    except EuclidError as e:
        return f"Error: {e}"
    lines = [f"Propagator on {'x'.join(map(str, extents))} ({boundary}), m={mass:g}, a={spacing:g}:\n",
             "| x | lattice | continuum |", "|---|---|---|"]
    for r in rows:
        continuum = "" if r["continuum"] is None else f"{r['continuum']:.10g}"
        lines.append(f"| {r['x_length']:g} | {r['lattice']:.10g} | {continuum} |")
    return "\n".join(lines)


@mcp.tool()
def markov_residuals(extents: list[int], mass: float, plane: int, stencil: str = "nearest") -> str:
    """Markov-property residuals for the split of a Dirichlet lattice at a coordinate plane of axis 0.

    Both residuals vanish (<= 1e-8) for the nearest-neighbour Laplacian and
    are large for the non-local next-nearest stencil.

    Args:
        extents: Sites per axis, 1 or 2 entries
        mass: Mass m > 0
        plane: Interior plane index on axis 0 (1 .. extents[0] - 2)
        stencil: "nearest" or "next-nearest"
    """
    if err := _validate_extents(extents) or _validate_model(mass):
        return err
    if not 1 <= plane <= extents[0] - 2:
        return f"Error: plane must be interior (1 .. {extents[0] - 2})."
    if stencil not in ("nearest", "next-nearest"):
        return "Error: stencil must be 'nearest' or 'next-nearest'."
    try:
        covariance = build_covariance(make_geometry(len(extents), extents, 1.0, Boundary.DIRICHLET), mass, stencil)
        projection = markov_check(covariance, 0, plane)
        conditional = conditional_covariance_check(covariance, 0, plane)
    except EuclidError as e:
        return f"Error: {e}"
    return (
        f"Markov residuals at plane {plane} ({stencil} stencil):\n"
        f"- projection e_A e_B - e_sigma: {projection:.3e}\n"
        f"- conditional covariance: {conditional:.3e}"
    )


@mcp.tool()
def partition_function(
    extents: list[int],
    mass: float,
    polynomial: list[float],
    method: str = "mc",
    samples: int = 20_000,
    seed: int = 0,
) -> str:
    """Partition function Z = E[e^U] of a Wick-ordered polynomial interaction (Z >= 1 by Jensen).

    Args:
        extents: Sites per axis, 1 or 2 entries, periodic, spacing 1
        mass: Mass m > 0
        polynomial: Coefficients of φ⁰..φⁿ (e.g. [0, 0, 0, 0, 0.1] for 0.1 φ⁴)
        method: "mc" (free-field Monte Carlo) or "quadrature" (<= 6 sites)
        samples: Monte Carlo samples (max 200000)
        seed: Random seed
    """
    if err := _validate_extents(extents) or _validate_model(mass):
        return err
    if method not in ("mc", "quadrature"):
        return "Error: method must be 'mc' or 'quadrature'."
    if not 2 <= samples <= MAX_SAMPLES:
        return f"Error: samples must be between 2 and {MAX_SAMPLES}."
    if seed < 0:
        return "Error: seed must be non-negative."
    if method == "quadrature" and math.prod(extents) > QUADRATURE_MAX_SITES:
        return f"Error: quadrature is limited to {QUADRATURE_MAX_SITES} sites."
    poly = _polynomial(polynomial)
    if isinstance(poly, str):
        return poly
    try:
        action = build_action(build_covariance(make_geometry(len(extents), extents, 1.0), mass), poly)
        if method == "quadrature":
            return f"Z = {partition_function_quadrature(action):.15g} (tensor Gauss-Hermite)"
        estimate = partition_function_mc(action, samples, seed)
    except EuclidError as e:
        return f"Error: {e}"
    return json.dumps(estimate.to_dict(), indent=2)


@mcp.tool()
def ground_state_energy(n_s: int, mass: float, polynomial: list[float], spacing: float = 1.0, nodes: int = 16) -> str:
    """Ground-state energy and vacuum overlaps of the transfer matrix of an n_s-site slice.

    Args:
        n_s: Sites per spatial slice (nodes**n_s <= 4096)
        mass: Mass m > 0
        polynomial: Coefficients of φ⁰..φⁿ; [] for the free field
        spacing: Lattice spacing a > 0
        nodes: Gauss-Hermite nodes per site (>= 8)
    """
    if err := _validate_model(mass, spacing):
        return err
    if n_s < 1:
        return "Error: n_s must be >= 1."
    poly = _polynomial(polynomial)
    if isinstance(poly, str):
        return poly
    try:
        state = ground_state(build_transfer(n_s, mass, spacing, poly, nodes))
    except (EuclidError, ValueError) as e:
        return f"Error: {e}"
    return json.dumps(state.to_dict(), indent=2)


@mcp.tool()
def nelson_symmetry(l_sites: int, t_sites: int, mass: float, polynomial: list[float], nodes: int = 12) -> str:
    """Vacuum amplitude of an l x t Dirichlet rectangle computed with time along either side.

    Args:
        l_sites: Rectangle side in sites
        t_sites: Other side in sites
        mass: Mass m > 0
        polynomial: Coefficients of φ⁰..φⁿ
        nodes: Gauss-Hermite nodes per site; nodes**max(l, t) <= 4096
    """
    if err := _validate_model(mass):
        return err
    poly = _polynomial(polynomial)
    if isinstance(poly, str):
        return poly
    try:
        result = nelson_symmetry_check(l_sites, t_sites, mass, 1.0, poly, nodes)
    except (EuclidError, ValueError) as e:
        return f"Error: {e}"
    return json.dumps(result.to_dict(), indent=2)


@mcp.tool()
def list_archived_runs(command: str = "", limit: int = 20) -> str:
    """List archived run reports, newest first.

    Args:
        command: Only runs of this subcommand (e.g. "verify-all"); empty for all
        limit: Maximum number of runs (max 100)
    """
    if not 1 <= limit <= MAX_LIST:
        return f"Error: limit must be between 1 and {MAX_LIST}."
    try:
        runs = list_runs(_get_conn(), command or None, limit)
    except (FileNotFoundError, ValueError) as e:
        return f"Error: {e}"
    if not runs:
        return f"No archived runs in {get_db_path()}"
    lines = [f"{len(runs)} run(s):\n"]
    for r in runs:
        lines.append(f"- #{r['id']} **{r['command']}** seed={r['seed']} verdict={r['verdict']} ({r['created_at']})")
    return "\n".join(lines)


def main():
    mcp.run(transport="stdio")


if __name__ == "__main__":
    main()
