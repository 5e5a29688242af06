"""The desk-scale acceptance suite behind ``euclid-qft verify-all``.

Each criterion adds named checks to a shared :class:`RunReport` and returns a
summary for the report's results. ``quick`` shrinks sample counts and sizes
without dropping any check.
"""

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from euclid_qft.covariance import (
    build_covariance,
    continuum_decay_rate,
    lattice_vs_continuum_refinement,
    magic_formula,
    magic_formula_quadrature,
)
from euclid_qft.errors import EuclidError
from euclid_qft.fock import free_hamiltonian_probe, functoriality_residual, hypercontractivity_probe
from euclid_qft.gaussian import (
    GaussianMomentProblem,
    gauss_hermite,
    hafnian,
    hafnian_bruteforce,
    sample_fields,
    wick_power,
)
from euclid_qft.interaction import (
    InteractionPolynomial,
    build_action,
    partition_function_mc,
    partition_function_quadrature,
    schwinger_function,
)
from euclid_qft.lattice import Boundary, box_region, make_geometry
from euclid_qft.markov import markov_check, markov_scan, one_particle_hamiltonian, semigroup_residuals
from euclid_qft.report import Check, RunReport
from euclid_qft.rng import stream
from euclid_qft.transfer import (
    build_transfer,
    fkn_check,
    ground_state,
    nelson_symmetry_check,
    nelson_symmetry_mc,
    semigroup_norm,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    run: Callable[[RunReport, bool, int], dict]

    @property
    def key(self) -> str:
        return f"{self.number:02d}_{self.name}"


def _hafnian_oracle(report: RunReport, quick: bool, seed: int) -> dict:
    count = 10 if quick else 50
    worst = 0.0
    for n in (2, 4, 6, 8, 10):
        rng = stream(seed, 1, n)
        for _ in range(count):
            x = rng.standard_normal((n, n))
            gram = x @ x.T
            scale = hafnian(np.abs(gram))
            worst = max(worst, abs(hafnian(gram) - hafnian_bruteforce(gram)) / scale)
    report.check("01.recursion_vs_matchings", worst <= 1e-12, worst, 1e-12)
    return {"matrices_per_order": count, "max_relative_error": worst}


def _magic_formula(report: RunReport, quick: bool, seed: int) -> dict:
    worst = 0.0
    for x, M in itertools.product((0.0, 0.5, 1.0, 1.5, 2.0), (0.5, 1.0, 1.5, 2.0)):
        exact = magic_formula(x, M)
        worst = max(worst, abs(magic_formula_quadrature(x, M) - exact) / exact)
    rate = continuum_decay_rate(1.0, dim=2)
    report.check("02.magic_formula", worst <= 1e-8, worst, 1e-8)
    report.check("02.decay_rate_2d", abs(rate - 1.0) <= 0.05, rate, 0.05, "fit on r in [5, 10]/m, m = 1")
    return {"pairs": 20, "max_relative_error": worst, "decay_rate_2d": rate}


def _markov(report: RunReport, quick: bool, seed: int) -> dict:
    side = 8 if quick else 16
    lattices = [
        (1, make_geometry(1, (32 if quick else 64,), 1.0, Boundary.DIRICHLET)),
        (2, make_geometry(2, (side, side), 1.0, Boundary.DIRICHLET)),
    ]
    summary = {}
    for dim, geometry in lattices:
        covariance = build_covariance(geometry, 1.0)
        for axis in range(dim):
            rows = markov_scan(covariance, axis=axis, seed=seed)
            projection = max(r["residual_projection"] for r in rows)
            conditional = max(r["residual_conditional"] for r in rows)
            tag = f"{dim}d_axis{axis}"
            detail = f"{len(rows)} planes"
            report.check(f"03.projection_{tag}", projection <= 1e-8, projection, 1e-8, detail)
            report.check(f"03.conditional_{tag}", conditional <= 1e-8, conditional, 1e-8, detail)
            summary[tag] = {"extents": list(geometry.extents), "axis": axis, "planes": len(rows),
                            "projection": projection, "conditional": conditional}
    control_geometry = make_geometry(1, (32,), 1.0, Boundary.DIRICHLET)
    control = markov_check(build_covariance(control_geometry, 1.0, "next-nearest"), axis=0, plane=16, seed=seed)
    report.check("03.nonlocal_control", control > 1e-3, control, 1e-3, "next-nearest stencil must violate")
    summary["nonlocal_control"] = control
    return summary


def _semigroup(report: RunReport, quick: bool, seed: int) -> dict:
    covariance = build_covariance(make_geometry(2, (8, 48), 1.0), 1.0)
    residuals = semigroup_residuals(covariance, (1, 2, 3))
    spectrum = one_particle_hamiltonian(covariance)
    fine = one_particle_hamiltonian(build_covariance(make_geometry(2, (8, 256), 0.1), 1.0))
    omega0 = float(fine.omega[0])
    report.check("04.semigroup", residuals["semigroup"] <= 1e-8, residuals["semigroup"], 1e-8)
    report.check("04.symmetry", residuals["symmetry"] <= 1e-12, residuals["symmetry"], 1e-12)
    report.check("04.omega_positive", bool(np.all(spectrum.omega > 0)), float(spectrum.omega.min()), 0.0)
    report.check("04.omega_zero_mode", abs(omega0 - 1.0) <= 0.02, omega0, 0.02, "a = 0.1, m = 1")
    return {**residuals, "omega": spectrum.omega.tolist(), "omega_zero_mode_fine": omega0}


def _sampling(report: RunReport, quick: bool, seed: int) -> dict:
    samples = 20_000 if quick else 100_000
    covariance = build_covariance(make_geometry(2, (4, 4), 1.0), 1.0)
    fields = sample_fields(covariance, samples, seed)
    exact = covariance.matrix
    worst = 0.0
    n = covariance.geometry.n_sites
    for x in range(n):
        products = fields[:, x : x + 1] * fields[:, x:]
        sigma = products.std(axis=0, ddof=1) / math.sqrt(samples)
        worst = max(worst, float(np.max(np.abs(products.mean(axis=0) - exact[x, x:]) / sigma)))
    sites = [0, 1, 4, 5]
    four = np.prod(fields[:, sites], axis=1)
    predicted = GaussianMomentProblem.from_sites(covariance, sites).moment()
    four_sigma = abs(four.mean() - predicted) / (four.std(ddof=1) / math.sqrt(samples))
    repeat = np.array_equal(sample_fields(covariance, 8, seed), sample_fields(covariance, 8, seed))
    report.check("05.two_point", worst <= 4, worst, 4, "max deviation in sigma over all pairs")
    report.check("05.four_point", four_sigma <= 4, float(four_sigma), 4, "sites 0, 1, 4, 5")
    report.check("05.reproducible", repeat)
    return {"samples": samples, "two_point_max_sigma": worst, "four_point_sigma": float(four_sigma),
            "four_point_predicted": predicted}


def _wick(report: RunReport, quick: bool, seed: int) -> dict:
    square = np.abs(wick_power(2, 1.0).coefficients - [-1, 0, 1]).max()
    quartic = np.abs(wick_power(4, 1.0).coefficients - [3, 0, -6, 0, 1]).max()
    report.check("06.wick_square", square <= 1e-12, float(square), 1e-12)
    report.check("06.wick_quartic", quartic <= 1e-12, float(quartic), 1e-12)
    worst = 0.0
    for c in (0.5, 1.0, 2.0):
        x, w = gauss_hermite(20, c)
        tables = [wick_power(n, c)(x) for n in range(7)]
        for n, m in itertools.product(range(7), repeat=2):
            expected = math.factorial(n) * c**n if n == m else 0.0
            worst = max(worst, abs(float(w @ (tables[n] * tables[m])) - expected) / max(1.0, expected))
    report.check("06.orthogonality", worst <= 1e-10, worst, 1e-10, "n, m <= 6")
    return {"square_error": float(square), "quartic_error": float(quartic), "orthogonality_error": worst}


def _hypercontractivity(report: RunReport, quick: bool, seed: int) -> dict:
    trials = 5 if quick else 20
    rows = []
    for p, q in itertools.product((1.5, 2.0, 3.0), (2.0, 3.0, 4.0)):
        if p > q:
            continue
        result = hypercontractivity_probe(math.sqrt((p - 1) / (q - 1)), p, q, trials=trials, seed=seed)
        rows.append(result.to_dict())
        report.check(f"07.bound_p{p:g}_q{q:g}", result.passed, result.max_ratio, 1e-6)
    sharp = hypercontractivity_probe(math.sqrt(1 / 3 + 0.15), 2.0, 4.0, trials=trials, seed=seed)
    report.check("07.sharpness_witness", sharp.witness_found, sharp.max_ratio, 1.0, "ratio must exceed 1")
    free = free_hamiltonian_probe(2.0, 0.5, 1.0, trials=trials, seed=seed)
    report.check("07.free_hamiltonian", free.passed, free.max_ratio, 1e-6, f"q = {free.q:.6g}")
    return {"probes": rows, "sharpness": sharp.to_dict(), "free_hamiltonian": free.to_dict()}


def _functoriality(report: RunReport, quick: bool, seed: int) -> dict:
    rng = stream(seed, 8)
    worst = 0.0
    for k in range(20):
        d = 1 + k % 3
        a, b = (rng.standard_normal((d, d)) for _ in range(2))
        a /= max(1.0, np.linalg.norm(a, 2))
        b /= max(1.0, np.linalg.norm(b, 2))
        worst = max(worst, functoriality_residual(a, b, 5))
    report.check("08.functoriality", worst <= 1e-10, worst, 1e-10, "20 pairs, d <= 3, D = 5")
    return {"pairs": 20, "max_residual": worst}


def _jensen(report: RunReport, quick: bool, seed: int) -> dict:
    lattices = [make_geometry(1, (n,), 1.0) for n in range(2, 7)]
    lattices.append(make_geometry(2, (2, 3), 1.0, Boundary.DIRICHLET))
    if quick:
        lattices = lattices[:3] + lattices[-1:]
    smallest = math.inf
    for geometry, lam in itertools.product(lattices, (0.05, 0.1, 0.5)):
        action = build_action(build_covariance(geometry, 1.0), InteractionPolynomial.quartic(lam))
        smallest = min(smallest, partition_function_quadrature(action, nodes=8))
    report.check("09.quadrature_jensen", smallest >= 1 - 1e-12, smallest, 1e-12, "min Z over small lattices")
    samples = 20_000 if quick else 100_000
    geometry = make_geometry(2, (8, 8), 1.0)
    estimate = partition_function_mc(build_action(build_covariance(geometry, 1.0), InteractionPolynomial.quartic(0.1)),
                                     samples, seed)
    report.check("09.mc_jensen", estimate.jensen_ok, estimate.z, estimate.stderr, "Z + 3 sigma >= 1 on 8x8")
    return {"min_quadrature_z": smallest, "mc": estimate.to_dict()}


def _fkn(report: RunReport, quick: bool, seed: int) -> dict:
    nodes = 8 if quick else 16
    rows = []
    for lam in (0.0, 0.1):
        polynomial = InteractionPolynomial.quartic(lam) if lam else InteractionPolynomial.zero()
        for n_s, n_t in ((1, 3), (2, 2), (1, 4)):
            result = fkn_check(build_transfer(n_s, 1.0, 1.0, polynomial, nodes), n_t)
            rows.append({"lambda": lam, "n_s": n_s, **result})
            report.check(f"10.fkn_l{lam:g}_ns{n_s}_nt{n_t}", result["residual"] <= 1e-8, result["residual"], 1e-8)
    return {"nodes": nodes, "rows": rows}


def _nelson(report: RunReport, quick: bool, seed: int) -> dict:
    nodes = 8 if quick else 12
    rows = []
    for lam in (0.0, 0.1):
        polynomial = InteractionPolynomial.quartic(lam) if lam else InteractionPolynomial.zero()
        for l_sites, t_sites in ((1, 3), (2, 3)):
            result = nelson_symmetry_check(l_sites, t_sites, 1.0, 1.0, polynomial, nodes)
            rows.append({"lambda": lam, **result.to_dict()})
            report.check(f"11.nelson_l{lam:g}_{l_sites}x{t_sites}", result.residual <= 1e-8, result.residual, 1e-8)
    samples = 20_000 if quick else 100_000
    mc = nelson_symmetry_mc(6, 4, 1.0, 1.0, InteractionPolynomial.quartic(0.1), samples, seed)
    report.check("11.nelson_mc_6x4", mc.residual <= 3, mc.residual, 3, "difference in combined sigma")
    return {"quadrature": rows, "mc": mc.to_dict()}


def _ground_state(report: RunReport, quick: bool, seed: int) -> dict:
    rows = []
    for n_s in (1, 2):
        transfer = build_transfer(n_s, 1.0, 1.0, InteractionPolynomial.quartic(0.1))
        state = ground_state(transfer)
        norm, expected = semigroup_norm(transfer, state, 3)
        rows.append({"n_s": n_s, **state.to_dict()})
        report.check(f"12.energy_negative_ns{n_s}", state.energy < 0, state.energy)
        report.check(f"12.positive_ns{n_s}", bool(state.vector.min() > 0), float(state.vector.min()))
        report.check(f"12.norm2_ns{n_s}", abs(state.norm2 - 1) <= 1e-12, state.norm2, 1e-12)
        report.check(f"12.norm1_ns{n_s}", state.norm1 < 1, state.norm1)
        report.check(f"12.overlap_ns{n_s}", state.overlap < 1, state.overlap)
        report.check(f"12.semigroup_norm_ns{n_s}", abs(norm - expected) <= 1e-10 * expected, norm, 1e-10)
    free = ground_state(build_transfer(2, 1.0, 1.0))
    report.check("12.free_energy_zero", free.energy == 0.0, free.energy)
    report.check("12.free_vacuum", bool(np.array_equal(free.vector, free.free_vector)))
    return {"rows": rows}


def _cross_method(report: RunReport, quick: bool, seed: int) -> dict:
    samples = 20_000 if quick else 100_000
    sweeps = 2_000 if quick else 20_000
    covariance = build_covariance(make_geometry(2, (4, 4), 1.0), 1.0)
    points = ((0, 0), (1, 0))
    rows = []
    for lam in (0.0, 0.1, 0.2):
        polynomial = InteractionPolynomial.quartic(lam) if lam else InteractionPolynomial.zero()
        action = build_action(covariance, polynomial)
        reweight = schwinger_function(action, points, "reweight", samples=samples, seed=seed)
        mcmc = schwinger_function(action, points, "mcmc", sweeps=sweeps, chains=2, seed=seed)
        sigma = math.hypot(reweight.stderr, mcmc.stderr)
        gap = abs(reweight.value - mcmc.value) / sigma
        report.check(f"13.reweight_vs_mcmc_l{lam:g}", gap <= 3, gap, 3, "difference in combined sigma")

        local = build_action(covariance, polynomial, box_region(covariance.geometry, (0, 0), (1, 1)))
        exact = schwinger_function(local, points, "quadrature")
        local_reweight = schwinger_function(local, points, "reweight", samples=samples, seed=seed)
        local_gap = abs(local_reweight.value - exact.value) / local_reweight.stderr
        report.check(f"13.reweight_vs_quadrature_l{lam:g}", local_gap <= 3, local_gap, 3, "2x2 region")
        rows.append({"lambda": lam, "reweight": reweight.to_dict(), "mcmc": mcmc.to_dict(),
                     "quadrature_region": exact.to_dict(), "reweight_region": local_reweight.to_dict()})
    return {"rows": rows}


def _refinement(report: RunReport, quick: bool, seed: int) -> dict:
    table = lattice_vs_continuum_refinement(1.0, 40.0, (0.5, 0.25, 0.125), separation=2.0, dim=1)
    report.check("14.monotone_refinement", table.monotone, table.rows[-1].abs_error, None,
                 "errors shrink with the spacing")
    return {"rows": [{"spacing_length": r.spacing, "lattice": r.lattice, "continuum": r.continuum,
                      "abs_error": r.abs_error} for r in table.rows]}


CRITERIA = (
    Criterion(1, "hafnian", _hafnian_oracle),
    Criterion(2, "magic_formula", _magic_formula),
    Criterion(3, "markov", _markov),
    Criterion(4, "semigroup", _semigroup),
    Criterion(5, "sampling", _sampling),
    Criterion(6, "wick", _wick),
    Criterion(7, "hypercontractivity", _hypercontractivity),
    Criterion(8, "functoriality", _functoriality),
    Criterion(9, "jensen", _jensen),
    Criterion(10, "fkn", _fkn),
    Criterion(11, "nelson", _nelson),
    Criterion(12, "ground_state", _ground_state),
    Criterion(13, "cross_method", _cross_method),
    Criterion(14, "refinement", _refinement),
)


def run_acceptance(
    report: RunReport,
    quick: bool = False,
    only: set[int] | None = None,
    progress: Callable[[Check], None] | None = None,
) -> RunReport:
    """Run the selected criteria into ``report``; a criterion that raises fails with the error as detail."""
    results = {}
    for criterion in CRITERIA:
        if only and criterion.number not in only:
            continue
        before = len(report.checks)
        try:
            results[criterion.key] = criterion.run(report, quick, report.seed)
        except (EuclidError, ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            logger.exception("criterion %d (%s) raised", criterion.number, criterion.name)
            report.check(f"{criterion.number:02d}.error", False, detail=f"{type(e).__name__}: {e}")
            results[criterion.key] = {"error": str(e)}
        if progress is not None:
            for item in report.checks[before:]:
                progress(item)
    report.results = results
    return report
