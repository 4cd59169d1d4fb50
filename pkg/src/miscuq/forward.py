"""Forward uncertainty propagation: push parameter samples through a
surrogate, estimate per-QoI densities by Gaussian-kernel KDE, and summarize
them as modes with 5%-95% quantile bands.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PushResult",
    "PdfEstimate",
    "BandSummary",
    "push_samples",
    "kde",
    "mode",
    "quantiles",
    "summarize_bands",
    "uncertainty_reduction",
    "write_bands_csv",
    "read_bands_csv",
    "write_density_csv",
]

DEFAULT_SAMPLES = 10_000
GRID_SIZE = 512
_KDE_CHUNK = 4096


@dataclass(frozen=True)
class PushResult:
    """Surrogate outputs at parameter draws: one column per QoI."""

    qoi_names: tuple[str, ...]
    samples: np.ndarray  # (S, J)
    extrapolated_fraction: float

    @property
    def count(self) -> int:
        return self.samples.shape[0]


def push_samples(surrogate, distribution, count: int = DEFAULT_SAMPLES, seed=0) -> PushResult:
    """Draw ``count`` points from ``distribution`` (anything with a
    ``sample(count, seed)`` method: a ParamSpace or a GaussianPosterior) and
    evaluate the surrogate at each.

    The fraction of draws falling outside the surrogate's knot-family domain
    (where the polynomial extrapolates) is reported alongside the samples.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    draws = distribution.sample(count, seed)
    values = surrogate.evaluate_many(draws)
    frac = float(surrogate.extrapolation_mask(draws).mean())
    return PushResult(tuple(surrogate.qoi_names), values, frac)


@dataclass(frozen=True)
class PdfEstimate:
    """Gaussian-kernel density estimate on an equispaced grid."""

    samples: np.ndarray
    bandwidth: float
    grid: np.ndarray
    density: np.ndarray
    degenerate: bool = False

    @property
    def resolution(self) -> float:
        """Grid spacing; the mode is only located to this resolution."""
        return float(self.grid[-1] - self.grid[0]) / (self.grid.size - 1)


def _silverman_bandwidth(samples: np.ndarray) -> float:
    sd = float(np.std(samples, ddof=1))
    q75, q25 = np.quantile(samples, [0.75, 0.25], method="linear")
    scale = min(sd, float(q75 - q25) / 1.34)
    if scale <= 0.0:
        scale = sd
    return 0.9 * scale * samples.size ** (-0.2)


def kde(samples, bandwidth: float | None = None, grid_size: int = GRID_SIZE) -> PdfEstimate:
    """Gaussian-kernel KDE with Silverman's rule-of-thumb bandwidth.

    Default bandwidth: 0.9 min(std, IQR/1.34) S^(-1/5).  Zero sample spread
    yields a degenerate estimate flagged as such (the mode is the common
    value, the bands collapse onto it).
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 2:
        raise ValueError(f"need at least 2 samples, got {samples.size}")
    lo, hi = float(samples.min()), float(samples.max())
    if hi == lo:
        grid = np.full(grid_size, lo)
        return PdfEstimate(samples, 0.0, grid, np.zeros(grid_size), degenerate=True)
    bw = float(bandwidth) if bandwidth is not None else _silverman_bandwidth(samples)
    if not bw > 0.0:
        raise ValueError(f"bandwidth must be positive, got {bw}")
    grid = np.linspace(lo - 3.0 * bw, hi + 3.0 * bw, grid_size)
    density = np.zeros(grid_size)
    for start in range(0, samples.size, _KDE_CHUNK):
        chunk = samples[start:start + _KDE_CHUNK]
        z = (grid[:, None] - chunk[None, :]) / bw
        density += np.exp(-0.5 * z * z).sum(axis=1)
    density /= samples.size * bw * np.sqrt(2.0 * np.pi)
    return PdfEstimate(samples, bw, grid, density)


def mode(pdf: PdfEstimate) -> float:
    """Grid abscissa of the highest density; ties go to the smallest."""
    if pdf.degenerate:
        return float(pdf.grid[0])
    return float(pdf.grid[int(np.argmax(pdf.density))])


def quantiles(samples, probs) -> np.ndarray:
    """Empirical quantiles with linear interpolation between order statistics
    (position (S-1) p + 1 among the sorted values, one-based)."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 2:
        raise ValueError(f"need at least 2 samples, got {samples.size}")
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    if np.any((probs <= 0.0) | (probs >= 1.0)):
        raise ValueError(f"probabilities must lie in (0, 1), got {probs}")
    return np.quantile(samples, probs, method="linear")


@dataclass(frozen=True)
class BandSummary:
    """Per-QoI mode and 5%-95% quantile band."""

    qoi_names: tuple[str, ...]
    modes: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    extrapolated_fraction: np.ndarray

    def widths(self) -> np.ndarray:
        return self.q95 - self.q05


def summarize_bands(push: PushResult, bandwidth: float | None = None) -> BandSummary:
    """KDE mode and empirical 5%/95% quantiles for every QoI column."""
    modes, q05, q95 = [], [], []
    for j in range(len(push.qoi_names)):
        col = push.samples[:, j]
        modes.append(mode(kde(col, bandwidth)))
        lo, hi = quantiles(col, [0.05, 0.95])
        q05.append(lo)
        q95.append(hi)
    frac = np.full(len(push.qoi_names), push.extrapolated_fraction)
    return BandSummary(push.qoi_names, np.array(modes), np.array(q05), np.array(q95), frac)


def uncertainty_reduction(prior_bands: BandSummary, post_bands: BandSummary) -> float:
    """Mean relative shrinkage of the quantile band widths, in percent."""
    if prior_bands.qoi_names != post_bands.qoi_names:
        raise ValueError("band summaries cover different QoI lists")
    w_prior = prior_bands.widths()
    if np.any(w_prior <= 0.0):
        bad = [n for n, w in zip(prior_bands.qoi_names, w_prior) if w <= 0.0]
        raise ValueError(f"prior band width must be positive, offending QoIs: {bad}")
    w_post = post_bands.widths()
    return float(100.0 * np.mean((w_prior - w_post) / w_prior))


def write_bands_csv(bands: BandSummary, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["qoi", "mode", "q05", "q95", "extrapolated_fraction"])
        for i, name in enumerate(bands.qoi_names):
            writer.writerow([name, repr(float(bands.modes[i])), repr(float(bands.q05[i])),
                             repr(float(bands.q95[i])), repr(float(bands.extrapolated_fraction[i]))])


def read_bands_csv(path: str | Path) -> BandSummary:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0] != ["qoi", "mode", "q05", "q95", "extrapolated_fraction"]:
        raise ValueError(f"{path}: not a band summary file")
    names, cols = [], [[], [], [], []]
    for row in rows[1:]:
        names.append(row[0])
        for c, val in zip(cols, row[1:5]):
            c.append(float(val))
    return BandSummary(tuple(names), *(np.array(c) for c in cols))


def write_density_csv(pdf: PdfEstimate, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["abscissa", "density"])
        for x, d in zip(pdf.grid, pdf.density):
            writer.writerow([repr(float(x)), repr(float(d))])
