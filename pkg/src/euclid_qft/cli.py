"""Command-line entry point: ``euclid-qft <subcommand> [options]``.

Exit codes: 0 when every verdict passes, 1 when a verdict fails or a method
does not converge, 2 for config and usage errors.
"""

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from euclid_qft import __version__
from euclid_qft.acceptance import CRITERIA, run_acceptance
from euclid_qft.config import RunConfig, default_config, load_config, parse_coefficients, parse_points
from euclid_qft.covariance import build_covariance, propagator_table
from euclid_qft.db import compare_to_baseline, init_db, record_run
from euclid_qft.errors import (
    BudgetError,
    ConfigError,
    ConvergenceError,
    DegenerateWeightsError,
    EuclidError,
    GeometryError,
    ReportFormatError,
)
from euclid_qft.fock import free_hamiltonian_probe, hypercontractivity_probe
from euclid_qft.gaussian import BRUTEFORCE_MAX_ORDER, hafnian, hafnian_bruteforce
from euclid_qft.interaction import (
    QUADRATURE_MAX_SITES,
    InteractionPolynomial,
    build_action,
    partition_function_mc,
    partition_function_quadrature,
    schwinger_function,
)
from euclid_qft.lattice import Boundary, make_geometry
from euclid_qft.markov import markov_scan, one_particle_hamiltonian, semigroup_residuals
from euclid_qft.report import RunReport, default_format, emit_report
from euclid_qft.rng import stream
from euclid_qft.transfer import (
    FKN_MAX_SITES,
    build_transfer,
    energy_density_scan,
    fkn_check,
    ground_state,
    nelson_symmetry_check,
    nelson_symmetry_mc,
    semigroup_norm,
    vacuum_envelope,
)

logger = logging.getLogger("euclid_qft")

SUBCOMMANDS = (
    "propagator",
    "markov-check",
    "semigroup-check",
    "hafnian",
    "hyper-check",
    "partition",
    "schwinger",
    "transfer",
    "nelson",
    "energy-density",
    "verify-all",
)
# scans that print CSV unless --format says otherwise
TABULAR = ("propagator", "energy-density")
CSV_COMMANDS = (*TABULAR, "markov-check")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return parse_coefficients(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _points(text: str):
    try:
        return parse_points(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected points like '0,0; 1,0', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    io = common.add_argument_group("run")
    io.add_argument("--config", type=Path, help="INI run config ([geometry], [model], [run])")
    io.add_argument("--out", type=Path, help="Report path (default: stdout or [run] output)")
    io.add_argument("--format", choices=("json", "csv"), help="Report format (default: csv for scans, json otherwise)")
    io.add_argument("--seed", type=int, help="Seed (default: [run] seed, then EUCLID_QFT_SEED)")
    io.add_argument("--record", action="store_true", help="Archive the report in the run database")
    io.add_argument("--verbose", "-v", action="store_true", help="Debug logging on stderr")
    io.add_argument("--threads", type=int, default=1, help="Worker processes for MCMC chains (1 = in-process)")
    io.add_argument("--chains", type=int, help="MCMC chains")
    io.add_argument("--sweeps", type=int, help="MCMC sweeps per chain")
    io.add_argument("--samples", type=int, help="Monte Carlo samples")
    io.add_argument("--therm-frac", type=float, help="Fraction of sweeps used for thermalization")
    io.add_argument("--checkpoint-every", type=int, help="Checkpoint MCMC chains every N sweeps")
    io.add_argument("--checkpoint-dir", type=Path, help="Directory for chain checkpoints")
    io.add_argument("--nodes", type=int, help="Gauss-Hermite nodes per site")
    io.add_argument("--method", choices=("reweight", "mcmc", "quadrature"), help="Schwinger function method")

    model = common.add_argument_group("model")
    model.add_argument("--extents", type=_int_list, help="Sites per axis, e.g. 4,4")
    model.add_argument("--spacing", type=float, help="Lattice spacing a (length)")
    model.add_argument("--boundary", choices=[b.value for b in Boundary])
    model.add_argument("--mass", type=float, help="Mass m (inverse length)")
    model.add_argument("--polynomial", type=_float_list, help="Coefficients of phi^0..phi^n")
    model.add_argument("--lambda", dest="lam", type=float, help="Shortcut for the quartic lambda phi^4")
    model.add_argument("--stencil", choices=("nearest", "next-nearest"))
    model.add_argument("--points", type=_points, help="Field points, e.g. '0,0; 1,0'")

    parser = argparse.ArgumentParser(prog="euclid-qft", description="Euclidean lattice field theory workbench.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    p = sub.add_parser("propagator", parents=[common], help="Lattice vs continuum two-point function")
    p.add_argument("--axis", type=int, default=0)

    p = sub.add_parser("markov-check", parents=[common], help="Markov residuals at every interior plane")
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--probes", type=int, default=8)

    p = sub.add_parser("semigroup-check", parents=[common], help="Dilation semigroup and one-particle energies")
    p.add_argument("--times", type=_int_list, default=[1, 2, 3])

    p = sub.add_parser("hafnian", parents=[common], help="Hafnian by recursion and by matchings")
    p.add_argument("gram", nargs="?", type=Path, help="CSV file holding a symmetric Gram matrix")
    p.add_argument("--order", type=int, default=6, help="Order of a random Gram matrix")
    p.add_argument("--matrix", type=str, help="Rows separated by ';', entries by ','")

    p = sub.add_parser("hyper-check", parents=[common], help="Single-mode hypercontractivity probe")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=4.0)
    p.add_argument("--norm", type=float, help="Contraction norm (default: the boundary sqrt((p-1)/(q-1)))")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--time", type=float, help="Probe e^{-tH0} at the boundary q-1 = (p-1)e^{2tm} instead")

    sub.add_parser("partition", parents=[common], help="Partition function Z = E[e^U]")
    sub.add_parser("schwinger", parents=[common], help="Interacting Schwinger function at --points")

    p = sub.add_parser("transfer", parents=[common], help="Transfer-matrix ground state")
    p.add_argument("--n-s", type=int, default=1, help="Sites per spatial slice")
    p.add_argument("--n-t", type=int, default=3, help="Slices for the path-integral identity")

    p = sub.add_parser("nelson", parents=[common], help="Nelson symmetry of a Dirichlet rectangle")
    p.add_argument("--l", dest="l_sites", type=int, default=2)
    p.add_argument("--t", dest="t_sites", type=int, default=3)
    p.add_argument("--mc", action="store_true", help="Monte Carlo instead of transfer quadrature")

    p = sub.add_parser("energy-density", parents=[common], help="Ground-state energy per site alpha_l")
    p.add_argument("--lengths", type=_int_list, default=[1, 2, 3])

    p = sub.add_parser("verify-all", parents=[common], help="Run the acceptance suite")
    p.add_argument("--quick", action="store_true", help="Smaller samples and lattices")
    p.add_argument("--only", type=_int_list, help="Criterion numbers to run, e.g. 1,5,12")
    return parser


# --- Config assembly ---


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied."""
    config = load_config(args.config) if args.config else default_config()
    g = config.geometry
    if args.extents or args.spacing or args.boundary:
        extents = args.extents or list(g.extents)
        try:
            geometry = make_geometry(len(extents), extents, args.spacing or g.spacing, args.boundary or g.boundary)
        except GeometryError as e:
            raise ConfigError(str(e), field="geometry") from None
    else:
        geometry = None
    polynomial = None
    if args.lam is not None and args.polynomial is not None:
        raise ConfigError("give either --lambda or --polynomial", field="model.polynomial")
    try:
        if args.lam is not None:
            polynomial = InteractionPolynomial.quartic(args.lam) if args.lam else InteractionPolynomial.zero()
        elif args.polynomial is not None:
            polynomial = InteractionPolynomial.from_coefficients(args.polynomial)
    except ValueError as e:
        raise ConfigError(str(e), field="model.polynomial") from None
    return config.with_overrides(
        geometry=geometry,
        mass=args.mass,
        polynomial=polynomial,
        stencil=args.stencil,
        method=args.method,
        samples=args.samples,
        sweeps=args.sweeps,
        chains=args.chains,
        therm_frac=args.therm_frac,
        nodes=args.nodes,
        seed=args.seed,
        points=args.points,
    )


def _new_report(args, config: RunConfig, **options) -> RunReport:
    echo = config.echo()
    echo["options"] = options
    return RunReport(command=args.command, config=echo, results={}, seed=config.resolved_seed)


# --- Subcommands ---


def cmd_propagator(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config, axis=args.axis)
    covariance = build_covariance(config.geometry, config.mass, config.stencil)
    report.results = propagator_table(covariance, args.axis)
    residual = covariance.equation_residual()
    report.check("equation_residual", residual <= 1e-8, residual, 1e-8, "(-Laplacian + m^2) C = 1/a^d")
    return report


def cmd_markov_check(args, config: RunConfig) -> RunReport:
    if config.geometry.boundary is not Boundary.DIRICHLET:
        raise ConfigError("markov-check needs boundary = dirichlet (a periodic plane does not separate)",
                          field="geometry.boundary")
    report = _new_report(args, config, axis=args.axis, probes=args.probes)
    covariance = build_covariance(config.geometry, config.mass, config.stencil)
    rows = markov_scan(covariance, args.axis, args.probes, config.resolved_seed)
    report.results = rows
    worst = max(max(r["residual_projection"], r["residual_conditional"]) for r in rows) if rows else 0.0
    if config.stencil == "nearest":
        report.check("markov_property", worst <= 1e-8, worst, 1e-8, f"{len(rows)} interior planes")
    else:
        report.check("nonlocal_violation", worst > 1e-3, worst, 1e-3, "non-local stencil must violate")
    return report


def cmd_semigroup_check(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config, times=args.times)
    covariance = build_covariance(config.geometry, config.mass, config.stencil)
    residuals = semigroup_residuals(covariance, tuple(args.times))
    spectrum = one_particle_hamiltonian(covariance)
    report.results = {
        **residuals,
        "omega_inverse_length": spectrum.omega.tolist(),
        "omega_closed_form": spectrum.closed_form().tolist(),
        "omega_continuum": spectrum.continuum().tolist(),
        "m_eff_inverse_length": spectrum.m_eff,
    }
    report.check("semigroup", residuals["semigroup"] <= 1e-8, residuals["semigroup"], 1e-8)
    report.check("symmetry", residuals["symmetry"] <= 1e-12, residuals["symmetry"], 1e-12)
    report.check("omega_positive", bool(np.all(spectrum.omega > 0)), spectrum.m_eff, 0.0)
    return report


def _parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
        return np.array(rows, dtype=float)
    except ValueError:
        raise ConfigError(f"cannot parse matrix {text!r}", field="--matrix") from None


def _load_gram(path: Path) -> np.ndarray:
    """Gram matrix from a comma-separated file, one row per line."""
    try:
        gram = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as e:
        raise ConfigError(f"cannot read Gram matrix {path}: {e}", field="gram") from None
    except ValueError as e:
        raise ConfigError(f"malformed Gram matrix {path}: {e}", field="gram") from None
    if gram.shape[0] != gram.shape[1]:
        raise ConfigError(f"Gram matrix {path} must be square, got shape {gram.shape}", field="gram")
    if not np.allclose(gram, gram.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(gram).max()))):
        raise ConfigError(f"Gram matrix {path} must be symmetric", field="gram")
    return gram


def cmd_hafnian(args, config: RunConfig) -> RunReport:
    if args.gram and args.matrix:
        raise ConfigError("give either a Gram matrix file or --matrix", field="gram")
    if args.gram:
        gram = _load_gram(args.gram)
    elif args.matrix:
        gram = _parse_matrix(args.matrix)
    else:
        if args.order < 0:
            raise ConfigError(f"order must be >= 0, got {args.order}", field="--order")
        x = stream(config.resolved_seed, 1, args.order).standard_normal((args.order, args.order))
        gram = x @ x.T
    report = _new_report(args, config, matrix=gram.tolist())
    value = hafnian(gram)
    report.results = {"order": int(gram.shape[0]), "hafnian": value}
    if gram.shape[0] <= BRUTEFORCE_MAX_ORDER:
        reference = hafnian_bruteforce(gram)
        scale = hafnian(np.abs(gram)) or 1.0
        error = abs(value - reference) / scale
        report.results.update({"matchings": reference, "relative_error": error})
        report.check("recursion_vs_matchings", error <= 1e-12, error, 1e-12)
    return report


def cmd_hyper_check(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config, p=args.p, q=args.q, norm=args.norm, trials=args.trials, time=args.time)
    if args.time is not None:
        result = free_hamiltonian_probe(args.p, args.time, config.mass, args.trials, config.resolved_seed)
    else:
        norm = math.sqrt((args.p - 1) / (args.q - 1)) if args.norm is None else args.norm
        result = hypercontractivity_probe(norm, args.p, args.q, args.trials, config.resolved_seed)
    report.results = result.to_dict()
    if result.bound_applies:
        report.check("hypercontractive_bound", result.max_ratio <= 1 + 1e-6, result.max_ratio, 1e-6)
    report.check("positivity", result.positivity_ok)
    report.check("mean_preserved", result.mean_ok)
    report.check("norms_converged", result.converged)
    return report


def cmd_partition(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config)
    action = build_action(build_covariance(config.geometry, config.mass, config.stencil), config.polynomial)
    if config.method == "quadrature":
        if config.geometry.n_sites > QUADRATURE_MAX_SITES:
            raise BudgetError(f"quadrature is limited to {QUADRATURE_MAX_SITES} sites, use --method reweight")
        z = partition_function_quadrature(action, config.nodes)
        report.results = {"Z": z, "method": "quadrature", "jensen_ok": z >= 1 - 1e-12}
        report.check("jensen", z >= 1 - 1e-12, z, 1e-12, "Z >= 1")
    else:
        estimate = partition_function_mc(action, config.samples, config.resolved_seed)
        report.results = {**estimate.to_dict(), "method": "mc"}
        report.check("jensen", estimate.jensen_ok, estimate.z, estimate.stderr, "Z + 3 stderr >= 1")
    return report


def _checkpoint_dir(args, config: RunConfig) -> Path | None:
    if not args.checkpoint_every:
        return None
    return args.checkpoint_dir or Path(f".euclid_qft_chains/{args.command}-seed{config.resolved_seed}")


def cmd_schwinger(args, config: RunConfig) -> RunReport:
    if not config.points:
        raise ConfigError("schwinger needs points ([run] points or --points)", field="run.points")
    report = _new_report(args, config)
    action = build_action(build_covariance(config.geometry, config.mass, config.stencil), config.polynomial)
    estimate = schwinger_function(
        action,
        config.points,
        config.method,
        samples=config.samples,
        seed=config.resolved_seed,
        sweeps=config.sweeps,
        chains=config.chains,
        therm_frac=config.therm_frac,
        nodes=config.nodes,
        workers=max(1, args.threads),
        checkpoint_dir=_checkpoint_dir(args, config),
        checkpoint_every=args.checkpoint_every or 0,
    )
    report.results = estimate.to_dict()
    return report


def cmd_transfer(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config, n_s=args.n_s, n_t=args.n_t)
    g = config.geometry
    transfer = build_transfer(args.n_s, config.mass, g.spacing, config.polynomial, config.nodes, g.boundary)
    state = ground_state(transfer)
    norm, expected = semigroup_norm(transfer, state, args.n_t)
    envelope = vacuum_envelope(transfer, state, args.n_t)
    report.results = {**state.to_dict(), "semigroup_norm": norm, "envelope": envelope}
    report.check("vacuum_positive", bool(state.vector.min() > 0), float(state.vector.min()))
    report.check("vacuum_normalized", abs(state.norm2 - 1) <= 1e-12, state.norm2, 1e-12)
    report.check("overlap_at_most_one", state.overlap <= 1 + 1e-12, state.overlap, 1e-12)
    report.check("semigroup_norm", abs(norm - expected) <= 1e-10 * expected, norm, 1e-10, "= e^{-tE}")
    report.check("vacuum_envelope", envelope["ok"], envelope["amplitude"])
    if args.n_s * (args.n_t + 1) <= FKN_MAX_SITES:
        fkn = fkn_check(transfer, args.n_t)
        report.results["fkn"] = fkn
        report.check("fkn_identity", fkn["residual"] <= 1e-8, fkn["residual"], 1e-8)
    return report


def cmd_nelson(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config, l_sites=args.l_sites, t_sites=args.t_sites, mc=args.mc)
    spacing = config.geometry.spacing
    if args.mc:
        result = nelson_symmetry_mc(args.l_sites, args.t_sites, config.mass, spacing, config.polynomial,
                                    config.samples, config.resolved_seed)
        report.check("nelson_symmetry", result.residual <= 3, result.residual, 3, "difference in combined sigma")
    else:
        result = nelson_symmetry_check(args.l_sites, args.t_sites, config.mass, spacing, config.polynomial,
                                       config.nodes)
        report.check("nelson_symmetry", result.residual <= 1e-8, result.residual, 1e-8)
    report.results = result.to_dict()
    return report


def cmd_energy_density(args, config: RunConfig) -> RunReport:
    report = _new_report(args, config, lengths=args.lengths)
    g = config.geometry
    scan = energy_density_scan(args.lengths, config.mass, g.spacing, config.polynomial, config.nodes, g.boundary)
    report.results = scan.rows()
    return report


def cmd_verify_all(args, config: RunConfig) -> RunReport:
    if args.only:
        known = {c.number for c in CRITERIA}
        unknown = sorted(set(args.only) - known)
        if unknown:
            raise ConfigError(f"unknown criteria {unknown}, choose from 1..{len(CRITERIA)}", field="--only")
    report = RunReport(command=args.command, config={"quick": args.quick, "only": args.only or []},
                       results={}, seed=config.resolved_seed)
    return run_acceptance(report, quick=args.quick, only=set(args.only or ()), progress=_print_check)


def _print_check(check) -> None:
    status = "PASS" if check.passed else "FAIL"
    detail = check.detail
    if check.value is not None:
        detail = f"{check.value!s} {detail}".strip()
    print(f"  [{status}] {check.name}" + (f" - {detail}" if detail else ""), file=sys.stderr)


HANDLERS = {
    "propagator": cmd_propagator,
    "markov-check": cmd_markov_check,
    "semigroup-check": cmd_semigroup_check,
    "hafnian": cmd_hafnian,
    "hyper-check": cmd_hyper_check,
    "partition": cmd_partition,
    "schwinger": cmd_schwinger,
    "transfer": cmd_transfer,
    "nelson": cmd_nelson,
    "energy-density": cmd_energy_density,
    "verify-all": cmd_verify_all,
}


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("euclid_qft")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _record(report: RunReport) -> None:
    conn = init_db()
    try:
        baseline = compare_to_baseline(conn, report)
        run_id = record_run(conn, report)
    finally:
        conn.close()
    if baseline["baseline_id"] is None:
        print(f"[record] run #{run_id} archived (first of its kind)", file=sys.stderr)
    else:
        same = "identical to" if baseline["identical"] else "differs from"
        print(f"[record] run #{run_id} archived, body {same} run #{baseline['baseline_id']}", file=sys.stderr)


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    _setup_logging(args.verbose)

    try:
        if args.format == "csv" and args.command not in CSV_COMMANDS:
            raise ReportFormatError(
                f"'{args.command}' produces a scalar report; csv is only available for {', '.join(CSV_COMMANDS)}"
            )
        config = resolve_config(args)
        started = time.perf_counter()
        report = HANDLERS[args.command](args, config)
        report.stamp(time.perf_counter() - started)
        fmt = args.format or (default_format(report) if args.command in TABULAR else "json")
        out = args.out or (Path(config.output) if config.output else None)
        text = emit_report(report, fmt, out)
        if out is None:
            sys.stdout.write(text)
        if args.record:
            _record(report)
    except ConfigError as e:
        print(f"[config] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, DegenerateWeightsError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_FAIL
    except (EuclidError, ValueError, OSError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "verify-all":
        failed = [c.name for c in report.checks if not c.passed]
        summary = "OK" if not failed else f"FAIL ({len(failed)} of {len(report.checks)} checks)"
        print(f"[verify-all] {summary}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
