"""Error analysis for correlated Monte Carlo series: binning, jackknife, τ_int and R̂."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

MIN_BINS = 16
PLATEAU_FACTOR = 2.0


def jackknife(estimator: Callable[..., float], *blocks: np.ndarray) -> tuple[float, float]:
    """Leave-one-block-out jackknife of ``estimator(*block_sums)``.

    Each array in ``blocks`` holds one additive quantity per block (block sums
    or block means with equal block sizes); the estimator receives the totals
    over the retained blocks. Returns (estimate on all blocks, jackknife error).
    """
    arrays = [np.asarray(b, dtype=float) for b in blocks]
    n = arrays[0].shape[0]
    totals = [a.sum(axis=0) for a in arrays]
    estimate = float(estimator(*totals))
    if n < 2:
        return estimate, 0.0
    resampled = np.array([estimator(*[t - a[i] for t, a in zip(totals, arrays)]) for i in range(n)], dtype=float)
    variance = (n - 1) / n * np.sum((resampled - resampled.mean()) ** 2)
    return estimate, float(np.sqrt(max(variance, 0.0)))


def bin_series(series: np.ndarray, bin_size: int) -> np.ndarray:
    """Means of consecutive bins of ``bin_size``; the incomplete tail is dropped."""
    series = np.asarray(series, dtype=float)
    n_bins = series.size // bin_size
    return series[: n_bins * bin_size].reshape(n_bins, bin_size).mean(axis=1)


@dataclass(frozen=True)
class ErrorAnalysis:
    """Binned error estimate of the mean of one observable.

    ``stderr`` is the jackknife error at the largest bin level; ``plateau`` is
    False when the two largest levels differ by more than a factor 2, which
    marks the series as undersampled.
    """

    mean: float
    stderr: float
    n_samples: int
    bin_sizes: tuple[int, ...]
    binned_errors: tuple[float, ...]
    tau_int: float
    plateau: bool

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "bin_sizes": list(self.bin_sizes),
            "binned_errors": list(self.binned_errors),
            "tau_int": self.tau_int,
            "plateau": self.plateau,
        }


def binning_analysis(chains: Sequence[np.ndarray] | np.ndarray) -> ErrorAnalysis:
    """Error of the pooled mean of one or more chains over doubling bin sizes.

    Bins never straddle two chains. Levels stop once fewer than MIN_BINS bins
    remain in total.
    """
    if isinstance(chains, np.ndarray) and chains.ndim == 1:
        chains = [chains]
    chains = [np.asarray(c, dtype=float) for c in chains]
    n_samples = sum(c.size for c in chains)
    mean = float(np.concatenate(chains).mean()) if n_samples else float("nan")

    sizes: list[int] = []
    errors: list[float] = []
    size = 1
    while True:
        bins = np.concatenate([bin_series(c, size) for c in chains])
        if bins.size < MIN_BINS and sizes:
            break
        if bins.size < 2:
            break
        _, error = jackknife(lambda total, count: total / count, bins, np.ones_like(bins))
        sizes.append(size)
        errors.append(error)
        size *= 2

    if not errors:
        return ErrorAnalysis(mean, 0.0, n_samples, (), (), 0.5, False)
    plateau = len(errors) >= 2 and (errors[-2] == errors[-1] == 0 or
                                    (errors[-2] > 0 and 1 / PLATEAU_FACTOR <= errors[-1] / errors[-2] <= PLATEAU_FACTOR))
    tau_int = 0.5 * (errors[-1] / errors[0]) ** 2 if errors[0] > 0 else 0.5
    if not plateau:
        logger.warning("binning did not plateau over %d levels (errors %s); series undersampled",
                       len(errors), ", ".join(f"{e:.3g}" for e in errors[-2:]))
    return ErrorAnalysis(
        mean=mean,
        stderr=float(errors[-1]),
        n_samples=n_samples,
        bin_sizes=tuple(sizes),
        binned_errors=tuple(float(e) for e in errors),
        tau_int=float(tau_int),
        plateau=bool(plateau),
    )


def gelman_rubin(chains: Sequence[np.ndarray]) -> float:
    """Potential scale reduction R̂ from between- and within-chain variances."""
    chains = [np.asarray(c, dtype=float) for c in chains]
    m = len(chains)
    n = min(c.size for c in chains)
    if m < 2 or n < 2:
        return float("nan")
    data = np.stack([c[:n] for c in chains])
    within = data.var(axis=1, ddof=1).mean()
    between = n * data.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    pooled = (n - 1) / n * within + between / n
    return float(np.sqrt(pooled / within))
