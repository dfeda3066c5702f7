"""Latent-space privacy mechanism.

Laplace sampling calibrated by feature-space sensitivity, masked latent
perturbation, the encode-perturb-decode image mechanism, budget accounting
with sequential/parallel composition, and an empirical one-dimensional
check of the privacy-loss ratio bound.

Two sensitivity modes are supported. The empirical mode measures the
maximum pairwise l1 distance over the latents of a local dataset; it is an
experience value only and says nothing about unseen images. The clip mode
projects every latent onto an l1 ball of radius B, which yields the
provable bound delta_f <= 2B.

Never select or discard mechanism outputs by comparing them to the original
image: output selection conditioned on the input voids the privacy
guarantee. The toolkit itself never does this.
"""

from __future__ import annotations

import csv
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .codec import AutoencoderModel, decode, encode
from .errors import BadMagicError, TruncatedError, VersionError
from .numerics import RngStream, StatsSummary, descriptive_stats, make_stream, rng_uniform_batch

LATENT_MAGIC = b"DPLZ"
LATENT_VERSION = 1


@dataclass(frozen=True)
class PrivacyParams:
    """Noise calibration: scale b = sensitivity / epsilon.

    mask selects which latent coordinates receive noise (True = perturb).
    "No noise" is expressed as sensitivity 0, never as infinite epsilon.
    """

    epsilon: float
    sensitivity: float
    mask: np.ndarray

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.sensitivity < 0:
            raise ValueError(f"sensitivity must be nonnegative, got {self.sensitivity}")
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


def full_mask(m: int) -> np.ndarray:
    return np.ones(m, dtype=bool)


def identity_mask(m: int, identity_len: int) -> np.ndarray:
    """Mask selecting only the identity block (leading coordinates)."""
    if not 1 <= identity_len <= m:
        raise ValueError(f"identity_len {identity_len} outside [1, {m}]")
    mask = np.zeros(m, dtype=bool)
    mask[:identity_len] = True
    return mask


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF map from u in (-0.5, 0.5] to Laplace(0, scale)."""
    u = np.asarray(u, dtype=np.float64)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_batch(
    stream: RngStream, n: int, scale: float
) -> tuple[np.ndarray, RngStream]:
    """n Laplace(0, scale) draws; consumes n uniforms even when scale is 0."""
    if scale < 0:
        raise ValueError(f"scale must be nonnegative, got {scale}")
    u, stream = rng_uniform_batch(stream, n)
    if scale == 0.0:
        return np.zeros(n), stream
    return laplace_from_uniform(u, scale), stream


def laplace_sample(stream: RngStream, scale: float) -> tuple[float, RngStream]:
    """Single Laplace(0, scale) draw; scale 0 returns 0."""
    vals, stream = laplace_batch(stream, 1, scale)
    return float(vals[0]), stream


@dataclass(frozen=True)
class SensitivityReport:
    """Empirical feature-space sensitivity over a set of latents.

    distances is the full pairwise l1 matrix; stats summarizes the
    off-diagonal pairs (each unordered pair counted once).
    """

    delta_f: float
    distances: np.ndarray
    stats: StatsSummary


def pairwise_l1(latents: np.ndarray) -> np.ndarray:
    z = np.asarray(latents, dtype=np.float64)
    n = z.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        out[i] = np.sum(np.abs(z - z[i]), axis=1)
    return out


def estimate_sensitivity(latents, n_bins: int = 20) -> SensitivityReport:
    """Max pairwise l1 latent distance plus histogram/heatmap material."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need at least 2 latent vectors of equal length")
    distances = pairwise_l1(z)
    iu = np.triu_indices(z.shape[0], k=1)
    pair_values = distances[iu]
    delta_f = float(pair_values.max())
    upper = delta_f if delta_f > 0 else 1.0
    edges = np.linspace(0.0, upper, n_bins + 1)
    return SensitivityReport(
        delta_f=delta_f,
        distances=distances,
        stats=descriptive_stats(pair_values, edges),
    )


def clip_latent(latent: np.ndarray, radius: float) -> np.ndarray:
    """Project onto the l1 ball of the given radius (returns a copy)."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    z = np.array(latent, dtype=np.float64)
    norm = float(np.sum(np.abs(z)))
    if norm <= radius:
        return z
    return z * (radius / norm)


def perturb_latent(
    latent: np.ndarray, params: PrivacyParams, stream: RngStream
) -> tuple[np.ndarray, RngStream]:
    """Add i.i.d. Laplace(scale) noise to the masked coordinates.

    Draws are consumed in coordinate order over the masked positions, so the
    output is a deterministic function of (latent, params, stream).
    Unmasked coordinates pass through bit-identical.
    """
    z = np.array(latent, dtype=np.float64)
    if params.mask.shape != z.shape:
        raise ValueError(
            f"mask length {params.mask.size} does not match latent length {z.size}"
        )
    n_noisy = int(np.count_nonzero(params.mask))
    noise, stream = laplace_batch(stream, n_noisy, params.scale)
    z[params.mask] += noise
    return z, stream


def dp_image(
    model: AutoencoderModel,
    image: np.ndarray,
    params: PrivacyParams,
    stream: RngStream,
) -> tuple[np.ndarray, RngStream]:
    """Encode, perturb the latent, decode.

    Decoding is input-independent post-processing of the perturbed latent,
    so the release costs exactly params.epsilon, the same as releasing the
    perturbed latent itself.
    """
    z = encode(model, image)
    z_noisy, stream = perturb_latent(z, params, stream)
    return decode(model, z_noisy), stream


@dataclass(frozen=True)
class LedgerEntry:
    release_id: str
    epsilon: float
    group: str


class PrivacyBudgetLedger:
    """Append-only record of releases with composition accounting.

    Releases within one disjointness group touch the same data and compose
    sequentially (budgets add); distinct groups touch disjoint data and
    compose in parallel (overall budget is the max over groups). Appends are
    serialized; entries are never mutated or removed.
    """

    def __init__(self):
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, release_id: str, epsilon: float, group: str = "default") -> None:
        if not epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        with self._lock:
            self._entries.append(LedgerEntry(release_id, float(epsilon), group))

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def total(self) -> float:
        """Overall budget: max over groups of the within-group epsilon sum."""
        sums: dict[str, float] = {}
        for e in self.entries:
            sums[e.group] = sums.get(e.group, 0.0) + e.epsilon
        return max(sums.values(), default=0.0)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["release_id", "epsilon", "group"])
            for e in self.entries:
                writer.writerow([e.release_id, repr(e.epsilon), e.group])

    @classmethod
    def load_csv(cls, path) -> "PrivacyBudgetLedger":
        ledger = cls()
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                ledger.record(rec["release_id"], float(rec["epsilon"]), rec["group"])
        return ledger


def verify_dp_empirical(
    scale: float,
    delta_f: float,
    n_samples: int = 10**6,
    bins: int = 64,
    stream: RngStream | None = None,
) -> tuple[float, bool]:
    """Empirical 1-D check of the Laplace privacy-loss ratio bound.

    Draws n_samples from Laplace(0, scale) and from delta_f +
    Laplace(0, scale), clamps both into [-8*scale, delta_f + 8*scale], and
    compares add-one-smoothed cell frequencies. Cells hold equal pooled
    mass (empirical quantiles of the combined sample) so every cell's
    frequency estimate carries roughly the same sampling error; with
    equal-width cells the near-empty tail cells would swamp the ratio
    statistic with noise far beyond any fixed slack.

    Returns (max over cells of |ln(p/q)|, pass) where pass means the
    maximum stays within 10% slack of the analytic bound delta_f / scale.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if n_samples < 10**5:
        raise ValueError(f"need at least 1e5 samples, got {n_samples}")
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    if stream is None:
        stream = make_stream(0)
    p, stream = laplace_batch(stream, n_samples, scale)
    q, stream = laplace_batch(stream, n_samples, scale)
    q = q + delta_f
    lo = -8.0 * scale
    hi = delta_f + 8.0 * scale
    p = np.clip(p, lo, hi)
    q = np.clip(q, lo, hi)
    pooled = np.sort(np.concatenate([p, q]))
    cut = (np.arange(1, bins) * pooled.size) // bins
    edges = np.concatenate([[lo], pooled[cut], [hi]])
    edges = np.maximum.accumulate(edges)
    cp, _ = np.histogram(p, bins=edges)
    cq, _ = np.histogram(q, bins=edges)
    p_hat = (cp + 1.0) / (n_samples + bins)
    q_hat = (cq + 1.0) / (n_samples + bins)
    max_log_ratio = float(np.max(np.abs(np.log(p_hat / q_hat))))
    epsilon = delta_f / scale
    return max_log_ratio, max_log_ratio <= epsilon * 1.1


def save_latents(latents: np.ndarray, path) -> None:
    """Canonical binary latent file: magic, version, count, dim, f64 LE."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected a (count, m) array, got shape {z.shape}")
    with open(path, "wb") as f:
        f.write(LATENT_MAGIC)
        f.write(struct.pack("<III", LATENT_VERSION, z.shape[0], z.shape[1]))
        f.write(z.astype("<f8").tobytes(order="C"))


def load_latents(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != LATENT_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {LATENT_MAGIC!r}")
    if len(blob) < 16:
        raise TruncatedError("latent file header incomplete")
    version, count, m = struct.unpack("<III", blob[4:16])
    if version != LATENT_VERSION:
        raise VersionError(f"unsupported latent file version {version}")
    expected = 16 + 8 * count * m
    if len(blob) < expected:
        raise TruncatedError(f"latent file ends at {len(blob)}, needed {expected}")
    if len(blob) > expected:
        raise TruncatedError(f"{len(blob) - expected} unexpected trailing bytes")
    return np.frombuffer(blob[16:], dtype="<f8").reshape(count, m).copy()


def latents_to_csv(latents: np.ndarray, path) -> None:
    z = np.asarray(latents, dtype=np.float64)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"z{i}" for i in range(z.shape[1])])
        for row in z:
            writer.writerow([repr(float(v)) for v in row])
