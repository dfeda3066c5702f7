"""Privacy and utility metrics plus classical obfuscation baselines.

Privacy side: identity similarity score (ISS) from the cosine of the
identity-block embeddings, and the de-identification success rate (FPPSR)
against a threshold calibrated from impostor statistics. Utility side:
l2 distance, relative l_p distortion, windowed SSIM, and a Frechet distance
between Gaussian fits of embedding sets (FED). All metrics are pure
functions; batch evaluation aggregates in image_id order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec import AutoencoderModel, encode
from .numerics import StatsSummary, descriptive_stats, sym_eigen

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2  # dynamic range L = 1 for [0,1] pixels
SSIM_C2 = (0.03 * 1.0) ** 2


def _check_same_shape(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def l2_distance(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _check_same_shape(x, y)
    return float(np.sqrt(np.sum((y - x) ** 2)))


def ald(x: np.ndarray, y: np.ndarray, p=math.inf) -> float:
    """Relative l_p distortion ||y - x||_p / ||x||_p over flattened pixels."""
    x, y = _check_same_shape(x, y)
    if p != math.inf and (not isinstance(p, (int, np.integer)) or p < 1):
        raise ValueError(f"p must be a positive integer or inf, got {p}")
    denom = np.linalg.norm(x.ravel(), ord=p)
    if denom == 0.0:
        raise ValueError("ALD undefined for an all-zero reference image")
    return float(np.linalg.norm((y - x).ravel(), ord=p) / denom)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(
    x: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA
) -> float:
    """Mean structural similarity over all fully interior windows.

    Gaussian window (default 11x11, sigma 1.5), weighted means and
    covariances per window, constants for unit dynamic range.
    """
    x, y = _check_same_shape(x, y)
    if x.shape[0] < window or x.shape[1] < window:
        raise ValueError(f"image {x.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)

    def filt(a):
        return np.tensordot(
            sliding_window_view(a, (window, window)), w, axes=([2, 3], [0, 1])
        )

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def iss_from_embeddings(e_x: np.ndarray, e_y: np.ndarray) -> float:
    """Cosine similarity mapped to [0, 1]; zero embeddings score 0.5.

    The denominator is sqrt(sum(x^2) * sum(y^2)) so that identical
    embeddings score exactly 1.0 and exact negatives exactly 0.0.
    """
    e_x = np.asarray(e_x, dtype=np.float64)
    e_y = np.asarray(e_y, dtype=np.float64)
    sx = float(np.dot(e_x, e_x))
    sy = float(np.dot(e_y, e_y))
    if sx == 0.0 or sy == 0.0:
        return 0.5
    cos = float(np.dot(e_x, e_y)) / math.sqrt(sx * sy)
    cos = min(1.0, max(-1.0, cos))
    return (cos + 1.0) / 2.0


def identity_embedding(model: AutoencoderModel, image: np.ndarray) -> np.ndarray:
    return encode(model, image)[: model.identity_len]


def iss(model: AutoencoderModel, x: np.ndarray, y: np.ndarray) -> float:
    """Identity similarity score between two images under the model."""
    return iss_from_embeddings(identity_embedding(model, x), identity_embedding(model, y))


def fppsr(model: AutoencoderModel, pairs, threshold: float) -> float:
    """Fraction of (original, perturbed) pairs whose ISS fell below threshold."""
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    hits = sum(1 for x, y in pairs if iss(model, x, y) < threshold)
    return hits / len(pairs)


@dataclass(frozen=True)
class ThresholdReport:
    """Calibrated decision threshold plus the score evidence behind it."""

    tau: float
    percentile: float
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray
    genuine_stats: StatsSummary
    impostor_stats: StatsSummary


def nearest_rank_percentile(values, percentile: float) -> float:
    """Nearest-rank order statistic: smallest v with cdf(v) >= percentile."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 0:
        raise ValueError("need at least one value")
    rank = max(1, math.ceil(percentile / 100.0 * vals.size))
    return float(vals[min(rank, vals.size) - 1])


def calibrate_threshold(
    model: AutoencoderModel, genuine_pairs, impostor_pairs, percentile: float = 95.0
) -> ThresholdReport:
    """Set tau at a percentile of the impostor ISS distribution.

    Genuine pairs share an identity; impostor pairs do not. The impostor
    upper tail says how similar two different people ever look to the
    embedding, which anchors the de-identification decision boundary.
    """
    if len(genuine_pairs) == 0 or len(impostor_pairs) == 0:
        raise ValueError("genuine and impostor pair lists must be nonempty")
    genuine = np.array([iss(model, x, y) for x, y in genuine_pairs])
    impostor = np.array([iss(model, x, y) for x, y in impostor_pairs])
    tau = nearest_rank_percentile(impostor, percentile)
    edges = np.linspace(0.0, 1.0, 21)
    return ThresholdReport(
        tau=tau,
        percentile=percentile,
        genuine_scores=genuine,
        impostor_scores=impostor,
        genuine_stats=descriptive_stats(genuine, edges),
        impostor_stats=descriptive_stats(impostor, edges),
    )


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    sym = (m + m.T) / 2.0  # guard against BLAS rounding asymmetry
    w, v = sym_eigen(sym)
    w = np.clip(w, 0.0, None)
    return v @ np.diag(np.sqrt(w)) @ v.T


def _gaussian_fit(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError("need at least 2 embedding vectors per side")
    mean = e.mean(axis=0)
    cov = np.atleast_2d(np.cov(e, rowvar=False))
    return mean, cov


def fed(embeddings_a, embeddings_b) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), with
    unbiased covariances and negative eigenvalues clamped to zero inside the
    matrix square roots.
    """
    mu_a, cov_a = _gaussian_fit(embeddings_a)
    mu_b, cov_b = _gaussian_fit(embeddings_b)
    if mu_a.shape != mu_b.shape:
        raise ValueError("embedding dimensions differ between sides")
    root_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(root_a @ cov_b @ root_a)
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * cross))
    return value


def blur_baseline(x: np.ndarray, kernel_sigma: float, kernel_radius: int) -> np.ndarray:
    """Gaussian blur with clamp-to-edge padding; radius 0 is the identity."""
    x = np.asarray(x, dtype=np.float64)
    if kernel_radius < 0:
        raise ValueError(f"kernel_radius must be >= 0, got {kernel_radius}")
    if kernel_radius == 0 or kernel_sigma <= 0.0:
        return x.copy()
    taps = np.exp(
        -(np.arange(-kernel_radius, kernel_radius + 1) ** 2)
        / (2.0 * kernel_sigma * kernel_sigma)
    )
    taps /= taps.sum()

    def pass_axis(a, axis):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (kernel_radius, kernel_radius)
        padded = np.pad(a, pad, mode="edge")
        return sliding_window_view(padded, taps.size, axis=axis) @ taps

    return pass_axis(pass_axis(x, 0), 1)


def mosaic_baseline(x: np.ndarray, block: int) -> np.ndarray:
    """Replace each block x block tile by its mean; edge tiles use their own."""
    x = np.asarray(x, dtype=np.float64)
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    out = np.empty_like(x)
    for i in range(0, x.shape[0], block):
        for j in range(0, x.shape[1], block):
            tile = x[i : i + block, j : j + block]
            out[i : i + block, j : j + block] = tile.mean()
    return out


@dataclass(frozen=True)
class MetricsRow:
    image_id: str
    l2: float
    ald_inf: float
    ssim: float
    iss: float


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[MetricsRow, ...]
    mean_l2: float
    mean_ald_inf: float
    mean_ssim: float
    mean_iss: float
    fed: float
    fppsr: float
    threshold: float


def evaluate_pairs(
    model: AutoencoderModel,
    pairs,
    threshold: float,
    ssim_window: int = SSIM_WINDOW,
    ssim_sigma: float = SSIM_SIGMA,
) -> MetricsReport:
    """Per-image and aggregate metrics over (image_id, original, perturbed).

    Rows are ordered by image_id ascending so aggregation is deterministic
    regardless of input or scheduling order.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    ordered = sorted(pairs, key=lambda rec: rec[0])
    rows = []
    emb_x = []
    emb_y = []
    for image_id, x, y in ordered:
        ex = identity_embedding(model, x)
        ey = identity_embedding(model, y)
        emb_x.append(ex)
        emb_y.append(ey)
        rows.append(
            MetricsRow(
                image_id=str(image_id),
                l2=l2_distance(x, y),
                ald_inf=ald(x, y, math.inf),
                ssim=ssim(x, y, ssim_window, ssim_sigma),
                iss=iss_from_embeddings(ex, ey),
            )
        )
    iss_vals = np.array([r.iss for r in rows])
    return MetricsReport(
        rows=tuple(rows),
        mean_l2=float(np.mean([r.l2 for r in rows])),
        mean_ald_inf=float(np.mean([r.ald_inf for r in rows])),
        mean_ssim=float(np.mean([r.ssim for r in rows])),
        mean_iss=float(np.mean(iss_vals)),
        fed=fed(np.stack(emb_x), np.stack(emb_y)) if len(rows) >= 2 else float("nan"),
        fppsr=float(np.mean(iss_vals < threshold)),
        threshold=threshold,
    )


def write_per_image_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "l2", "ald_inf", "ssim", "iss"])
        for r in report.rows:
            writer.writerow([r.image_id, repr(r.l2), repr(r.ald_inf), repr(r.ssim), repr(r.iss)])


def write_aggregate_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "value"])
        for name in ("mean_l2", "mean_ald_inf", "mean_ssim", "mean_iss", "fed", "fppsr", "threshold"):
            writer.writerow([name, repr(getattr(report, name))])
