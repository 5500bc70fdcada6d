"""Image-quality metrics and best-of-N evaluation of sampled clips."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from scipy import ndimage

from .autodiff import Array
from .errors import ShapeMismatch
from .formats import write_csv

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
LUMA = np.array([0.299, 0.587, 0.114])
REPORT_COLUMNS = ("clip", "psnr", "ssim", "samples")


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[Array, Array]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"images differ in shape: {x.shape} vs {y.shape}")
    return x, y


def psnr(a: ArrayLike, b: ArrayLike) -> float:
    """10·log10(1 / MSE) for images in [0, 1]; identical images give the 100 dB cap."""
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def luma(image: ArrayLike) -> Array:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ LUMA
    if img.ndim == 2:
        return img
    raise ShapeMismatch(f"expected an (H, W) or (H, W, 3) image, got {img.shape}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> Array:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_map(mu_x: Array, mu_y: Array, xx: Array, yy: Array, xy: Array) -> Array:
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return num / den


def ssim(a: ArrayLike, b: ArrayLike) -> float:
    """Mean SSIM over every full 11x11 Gaussian window (σ = 1.5) of the luma images."""
    x, y = _pair(a, b)
    x, y = luma(x), luma(y)
    if min(x.shape) < SSIM_WINDOW:
        raise ShapeMismatch(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    radius = SSIM_WINDOW // 2
    # truncate puts the filter radius at exactly five pixels
    truncate = radius / SSIM_SIGMA
    crop = (slice(radius, -radius), slice(radius, -radius))
    stats = [
        ndimage.gaussian_filter(v, sigma=SSIM_SIGMA, truncate=truncate, mode="reflect")[crop]
        for v in (x, y, x * x, y * y, x * y)
    ]
    return float(np.mean(_ssim_map(*stats)))


def ssim_naive(a: ArrayLike, b: ArrayLike) -> float:
    """Window-by-window SSIM, the reference for :func:`ssim`."""
    x, y = _pair(a, b)
    x, y = luma(x), luma(y)
    if min(x.shape) < SSIM_WINDOW:
        raise ShapeMismatch(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    w = gaussian_window()
    k = SSIM_WINDOW
    scores = []
    for i in range(x.shape[0] - k + 1):
        for j in range(x.shape[1] - k + 1):
            px, py = x[i : i + k, j : j + k], y[i : i + k, j : j + k]
            stats = [np.sum(w * v) for v in (px, py, px * px, py * py, px * py)]
            scores.append(float(_ssim_map(*(np.asarray(s) for s in stats))))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------------------------
# Best-of-N


@dataclass(frozen=True)
class BestOfN:
    psnr: float
    ssim: float
    sample_psnr: tuple[float, ...]
    sample_ssim: tuple[float, ...]

    @property
    def num_samples(self) -> int:
        return len(self.sample_psnr)


def clip_scores(sample: ArrayLike, truth: ArrayLike) -> tuple[float, float]:
    """Per-frame PSNR and SSIM of a clip (F, H, W, 3), averaged over frames."""
    s, t = _pair(sample, truth)
    if s.ndim != 4:
        raise ShapeMismatch(f"expected a clip (F, H, W, 3), got {s.shape}")
    p = [psnr(a, b) for a, b in zip(s, t, strict=True)]
    q = [ssim(a, b) for a, b in zip(s, t, strict=True)]
    return float(np.mean(p)), float(np.mean(q))


def best_of_n(samples: Sequence[ArrayLike], truth: ArrayLike) -> BestOfN:
    """Best clip-averaged PSNR and SSIM over N sampled clips, each maximized on its own."""
    if not samples:
        raise ShapeMismatch("best_of_n needs at least one sample")
    scores = [clip_scores(s, truth) for s in samples]
    ps = tuple(s[0] for s in scores)
    ss = tuple(s[1] for s in scores)
    return BestOfN(max(ps), max(ss), ps, ss)


@dataclass(frozen=True)
class EvalReport:
    clips: tuple[BestOfN, ...]

    @property
    def num_samples(self) -> int:
        return min((c.num_samples for c in self.clips), default=0)

    def _stat(self, values: list[float]) -> tuple[float, float]:
        if not values:
            return math.nan, math.nan
        return float(np.mean(values)), float(np.std(values))

    @property
    def psnr(self) -> tuple[float, float]:
        """Mean and standard deviation of the per-clip best PSNR."""
        return self._stat([c.psnr for c in self.clips])

    @property
    def ssim(self) -> tuple[float, float]:
        return self._stat([c.ssim for c in self.clips])

    def summary(self) -> str:
        (pm, ps), (sm, ss) = self.psnr, self.ssim
        return (
            f"{len(self.clips)} clips, best of {self.num_samples} samples\n"
            f"  PSNR {pm:.3f} ± {ps:.3f} dB\n"
            f"  SSIM {sm:.4f} ± {ss:.4f}"
        )


def evaluate_dataset(
    predictions: Sequence[Sequence[ArrayLike]], truths: Sequence[ArrayLike]
) -> EvalReport:
    """Best-of-N scores for each clip; ``predictions[i]`` holds the samples for ``truths[i]``."""
    if len(predictions) != len(truths):
        raise ShapeMismatch(f"{len(predictions)} sample sets for {len(truths)} clips")
    return EvalReport(tuple(best_of_n(p, t) for p, t in zip(predictions, truths, strict=True)))


def write_report(path: str | Path, report: EvalReport) -> None:
    rows: list[dict[str, object]] = [
        {"clip": i, "psnr": c.psnr, "ssim": c.ssim, "samples": c.num_samples}
        for i, c in enumerate(report.clips)
    ]
    for label, index in (("mean", 0), ("std", 1)):
        rows.append(
            {
                "clip": label,
                "psnr": report.psnr[index],
                "ssim": report.ssim[index],
                "samples": report.num_samples,
            }
        )
    write_csv(path, REPORT_COLUMNS, rows)
