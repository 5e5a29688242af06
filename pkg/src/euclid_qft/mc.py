"""Local Metropolis sampling of dμ_Λ ∝ e^{−S_free(φ) + U_Λ(φ)} dφ.

S_free(φ) = ½ φᵀQφ with Q the sparse precision matrix a^d(−Δ_lat + m²). A
site update φ_x → φ_x + δ changes the log weight by

    −δ (Qφ)_x − ½ Q_xx δ² − a^d [ :P:(φ_x + δ) − :P:(φ_x) ]_{c_x}.

Each sweep draws its proposals and accept variates from the stream keyed by
(seed, chain, sweep), so a chain restored from a checkpoint continues exactly
as the uninterrupted one would.
"""

import hashlib
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from euclid_qft.analysis import ErrorAnalysis, binning_analysis, gelman_rubin
from euclid_qft.errors import CheckpointError
from euclid_qft.interaction import WickAction
from euclid_qft.rng import stream

logger = logging.getLogger(__name__)

TARGET_ACCEPTANCE = (0.4, 0.6)
TUNE_FACTOR = 1.1

CHECKPOINT_MAGIC = b"EQFTCKPT"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<8sH")
_HEADER = struct.Struct("<QqqdqqBI")
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass(frozen=True, eq=False)
class ChainState:
    """Everything a chain needs to continue: field, counters and proposal width.

    The random stream is implied by (seed, chain, sweep).
    """

    field: np.ndarray
    sweep: int
    seed: int
    chain: int
    width: float
    accepted: int = 0
    proposed: int = 0
    frozen: bool = False

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def same_as(self, other: "ChainState") -> bool:
        return (
            np.array_equal(self.field, other.field)
            and (self.sweep, self.seed, self.chain, self.width, self.accepted, self.proposed, self.frozen)
            == (other.sweep, other.seed, other.chain, other.width, other.accepted, other.proposed, other.frozen)
        )


def initial_state(action: WickAction, seed: int, chain: int = 0, width: float = 1.0) -> ChainState:
    """Cold start at φ = 0."""
    if not width > 0:
        raise ValueError(f"proposal width must be > 0, got {width}")
    return ChainState(field=np.zeros(action.geometry.n_sites), sweep=0, seed=seed, chain=chain, width=width)


def local_log_ratio(action: WickAction, field: np.ndarray, site: int, new_value: float) -> float:
    """log of the weight ratio for setting φ_site to ``new_value``."""
    precision = action.covariance.precision
    start, stop = precision.indptr[site], precision.indptr[site + 1]
    row_cols = precision.indices[start:stop]
    row_vals = precision.data[start:stop]
    delta = new_value - field[site]
    q_phi = float(row_vals @ field[row_cols])
    q_xx = float(row_vals[row_cols == site].sum())
    free = -delta * q_phi - 0.5 * q_xx * delta * delta
    old, new = action.site_density(site, np.array([field[site], new_value]))
    return free - float(new - old)


def metropolis_sweep(state: ChainState, action: WickAction, proposal_width: float | None = None) -> ChainState:
    """One sequential sweep over all sites; returns the next state."""
    width = state.width if proposal_width is None else proposal_width
    if not width > 0:
        raise ValueError(f"proposal width must be > 0, got {width}")
    n = action.geometry.n_sites
    rng = stream(state.seed, state.chain, state.sweep)
    steps = rng.uniform(-width, width, n)
    thresholds = np.log(rng.random(n))
    field = state.field.copy()
    accepted = 0
    for site in range(n):
        proposal = field[site] + steps[site]
        if thresholds[site] < local_log_ratio(action, field, site, proposal):
            field[site] = proposal
            accepted += 1
    return replace(
        state,
        field=field,
        sweep=state.sweep + 1,
        width=width,
        accepted=state.accepted + accepted,
        proposed=state.proposed + n,
    )


def _tune(state: ChainState, before: ChainState) -> ChainState:
    rate = (state.accepted - before.accepted) / max(state.proposed - before.proposed, 1)
    low, high = TARGET_ACCEPTANCE
    if rate > high:
        return replace(state, width=state.width * TUNE_FACTOR)
    if rate < low:
        return replace(state, width=state.width / TUNE_FACTOR)
    return state


def _measure(field: np.ndarray, observables: list[list[int]]) -> np.ndarray:
    return np.array([np.prod(field[sites]) if sites else 1.0 for sites in observables])


@dataclass(frozen=True, eq=False)
class ChainRun:
    state: ChainState
    series: np.ndarray


def run_chain(
    action: WickAction,
    state: ChainState,
    sweeps: int,
    therm_sweeps: int,
    observable_sites: list[list[int]],
) -> ChainRun:
    """Advance ``state`` until its sweep counter reaches ``sweeps``.

    Sweeps below ``therm_sweeps`` tune the width toward 40–60% acceptance;
    the width is frozen afterwards and every later sweep is measured. A chain
    resumed from any intermediate state yields the same remaining series.
    """
    rows = []
    while state.sweep < sweeps:
        before = state
        state = metropolis_sweep(state, action)
        if state.sweep <= therm_sweeps:
            if not state.frozen:
                state = _tune(state, before)
            if state.sweep == therm_sweeps:
                state = replace(state, frozen=True, accepted=0, proposed=0)
        else:
            rows.append(_measure(state.field, observable_sites))
    series = np.array(rows).T if rows else np.zeros((len(observable_sites), 0))
    return ChainRun(state, series)


@dataclass(frozen=True, eq=False)
class ChainsResult:
    analyses: tuple[ErrorAnalysis, ...]
    r_hat: tuple[float, ...]
    acceptance: float
    runs: tuple[ChainRun, ...]

    @property
    def undersampled(self) -> bool:
        return not all(a.plateau for a in self.analyses)


def _chain_paths(directory: Path, chain: int) -> tuple[Path, Path]:
    return directory / f"chain{chain}.ckpt", directory / f"chain{chain}.npz"


def _chain_job(args) -> ChainRun:
    action, seed, chain, width, sweeps, therm, sites, directory, every = args
    if directory is None:
        return run_chain(action, initial_state(action, seed, chain, width), sweeps, therm, sites)
    state_path, series_path = _chain_paths(directory, chain)
    if state_path.exists():
        state = restore(state_path)
        if state.seed != seed or state.chain != chain or state.field.size != action.geometry.n_sites:
            raise CheckpointError(f"checkpoint {state_path} belongs to another run")
        series = load_series(series_path) if series_path.exists() else np.zeros((len(sites), 0))
        if series.shape != (len(sites), max(0, state.sweep - therm)):
            raise CheckpointError(f"series {series_path} does not match checkpoint at sweep {state.sweep}")
        logger.info("chain %d resumed at sweep %d", chain, state.sweep)
    else:
        state = initial_state(action, seed, chain, width)
        series = np.zeros((len(sites), 0))
    while state.sweep < sweeps:
        segment = run_chain(action, state, min(state.sweep + every, sweeps), therm, sites)
        state = segment.state
        series = np.concatenate([series, segment.series], axis=1)
        save_series(series, series_path)
        checkpoint(state, state_path)
    return ChainRun(state, series)


def run_chains(
    action: WickAction,
    sweeps: int,
    chains: int = 2,
    seed: int = 0,
    therm_frac: float = 0.2,
    observables=(),
    width: float = 1.0,
    workers: int = 1,
    checkpoint_dir: Path | str | None = None,
    checkpoint_every: int = 0,
) -> ChainsResult:
    """Independent chains (keyed by chain index) with pooled binned errors and R̂ per observable.

    ``observables`` is a list of point lists; each observable is the product
    of the field over its points. With ``workers > 1`` chains run in worker
    processes; results are ordered by chain index, so the output does not
    depend on scheduling.

    With ``checkpoint_dir`` each chain saves its state and series every
    ``checkpoint_every`` sweeps and resumes from them when rerun; a resumed
    run returns the same series as an uninterrupted one.
    """
    if not 0 < therm_frac < 1:
        raise ValueError(f"therm_frac must be in (0, 1), got {therm_frac}")
    if chains < 1 or sweeps < 2:
        raise ValueError(f"need chains >= 1 and sweeps >= 2, got {chains} and {sweeps}")
    therm = max(1, int(therm_frac * sweeps))
    sites = [[action.geometry.index(p) for p in points] for points in observables]
    directory = None
    if checkpoint_dir is not None:
        if checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {checkpoint_every}")
        directory = Path(checkpoint_dir)
        directory.mkdir(parents=True, exist_ok=True)
    jobs = [(action, seed, chain, width, sweeps, therm, sites, directory, checkpoint_every) for chain in range(chains)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_chain_job, jobs))
    else:
        runs = [_chain_job(job) for job in jobs]

    analyses = []
    r_hats = []
    for k in range(len(sites)):
        per_chain = [run.series[k] for run in runs]
        analyses.append(binning_analysis(per_chain))
        r_hats.append(gelman_rubin(per_chain) if chains > 1 else float("nan"))
    acceptance = float(np.mean([run.state.acceptance for run in runs]))
    logger.info("ran %d chains x %d sweeps, acceptance %.2f", chains, sweeps, acceptance)
    return ChainsResult(tuple(analyses), tuple(r_hats), acceptance, tuple(runs))


# --- Checkpoints ---


def encode_state(state: ChainState) -> bytes:
    body = _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION) + _HEADER.pack(
        state.seed,
        state.chain,
        state.sweep,
        state.width,
        state.accepted,
        state.proposed,
        int(state.frozen),
        state.field.size,
    ) + np.asarray(state.field, dtype="<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def decode_state(payload: bytes) -> ChainState:
    minimum = _PREAMBLE.size + _HEADER.size + _DIGEST_SIZE
    if len(payload) < minimum:
        raise CheckpointError(f"checkpoint truncated: {len(payload)} bytes, need at least {minimum}")
    body, digest = payload[:-_DIGEST_SIZE], payload[-_DIGEST_SIZE:]
    magic, version = _PREAMBLE.unpack_from(body)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)")
    seed, chain, sweep, width, accepted, proposed, frozen, n_sites = _HEADER.unpack_from(body, _PREAMBLE.size)
    offset = _PREAMBLE.size + _HEADER.size
    if len(body) - offset != 8 * n_sites:
        raise CheckpointError(f"checkpoint field holds {(len(body) - offset) // 8} values, header says {n_sites}")
    field = np.frombuffer(body, dtype="<f8", count=n_sites, offset=offset).astype(float)
    return ChainState(field, sweep, seed, chain, width, accepted, proposed, bool(frozen))


def checkpoint(state: ChainState, path: Path | str) -> Path:
    """Write ``state`` atomically (temp file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_state(state))
    tmp.replace(path)
    logger.debug("checkpoint chain=%d sweep=%d -> %s", state.chain, state.sweep, path)
    return path


def restore(path: Path | str) -> ChainState:
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return decode_state(payload)


def save_series(series: np.ndarray, path: Path | str) -> None:
    """Observable series next to a checkpoint, as ``.npz``."""
    np.savez(Path(path), series=series)


def load_series(path: Path | str) -> np.ndarray:
    with np.load(Path(path)) as data:
        return data["series"]


# --- Detailed balance on a value grid ---


def site_density(action: WickAction, field: np.ndarray, site: int, grid: np.ndarray) -> np.ndarray:
    """Normalized conditional density of φ_site on ``grid`` given the other sites."""
    base = field.copy()
    log_p = np.array([local_log_ratio(action, base, site, v) for v in grid])
    p = np.exp(log_p - log_p.max())
    return p / p.sum()


def grid_transition_matrix(action: WickAction, field: np.ndarray, site: int, grid: np.ndarray,
                           width: float) -> np.ndarray:
    """Metropolis kernel of one site update restricted to a uniform value grid.

    Proposals are uniform over the grid points within ``width``; acceptance
    uses :func:`local_log_ratio`, the same formula the sweeps use.
    """
    step = grid[1] - grid[0]
    k = grid.size
    proposal = step / (2 * width)
    matrix = np.zeros((k, k))
    for i in range(k):
        current = field.copy()
        current[site] = grid[i]
        for j in range(k):
            if i != j and abs(grid[j] - grid[i]) <= width + 1e-12:
                ratio = local_log_ratio(action, current, site, grid[j])
                matrix[i, j] = proposal * math.exp(min(0.0, ratio))
        matrix[i, i] = 1.0 - matrix[i].sum()
    return matrix


def detailed_balance_residual(action: WickAction, site: int = 0, width: float = 0.5, points: int = 201,
                              span: float = 5.0) -> float:
    """max |p K − p| / max p for the exact conditional density p on a grid."""
    field = np.zeros(action.geometry.n_sites)
    sigma = 1.0 / math.sqrt(action.covariance.precision[site, site])
    grid = np.linspace(-span * sigma, span * sigma, points)
    density = site_density(action, field, site, grid)
    kernel = grid_transition_matrix(action, field, site, grid, width * sigma)
    return float(np.max(np.abs(density @ kernel - density)) / density.max())
