"""Federated, differentially private feature mean and variance estimation.

For every feature the server runs two subsampled queries: participants
join each query independently with probability q, eligible participants
report an upper-clipped statistic (mean clipped at S_mu, Bessel-
corrected variance clipped at S_s), and the server divides the sum by
the fixed expected count qW and adds Gaussian noise with standard
deviation z*S/(qW). Participants without enough rows abstain (no rows
for the mean, fewer than two for the variance); the qW denominator is
kept regardless.

The resulting statistics scale feature columns before training, either
dividing the centered value by sqrt(s) ("std" mode, default, yields
unit variance when the statistics are exact) or by s itself ("var"
mode, the literal quotient form).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientData, InvalidInput
from .features import FeatureVector
from .privacy import PrivacyLedger, gaussian_noise, noise_stddev

VARIANCE_FLOOR = 1e-6
DEFAULT_CLIP_MU = 1.0
DEFAULT_CLIP_VAR = 1.0
NORMALIZE_MODES = ("std", "var")


@dataclass(eq=False)
class NormStats:
    """Per-feature location and spread estimates with their clip bounds."""

    mu: np.ndarray
    s: np.ndarray
    clip_mu: float
    clip_var: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if self.mu.shape != self.s.shape or self.mu.ndim != 1:
            raise InvalidInput("mu and s must be 1-d vectors of equal length")
        if not (np.isfinite(self.mu).all() and np.isfinite(self.s).all()):
            raise InvalidInput("statistics must be finite")
        if (self.s <= 0).any():
            raise InvalidInput("variance entries must be strictly positive")

    @property
    def n_features(self) -> int:
        return self.mu.size

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "s": self.s.tolist(),
                "clip_mu": self.clip_mu, "clip_var": self.clip_var}

    @classmethod
    def from_dict(cls, obj: dict) -> "NormStats":
        return cls(np.asarray(obj["mu"], dtype=float), np.asarray(obj["s"], dtype=float),
                   float(obj["clip_mu"]), float(obj["clip_var"]))


def save_norm_stats(stats: NormStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(stats.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_norm_stats(path) -> NormStats:
    with open(path, encoding="utf-8") as fh:
        return NormStats.from_dict(json.load(fh))


def _columns(dataset, mask) -> np.ndarray:
    x = dataset.features
    if mask is not None:
        x = x[:, mask]
    return np.asarray(x, dtype=np.float64)


def local_mean(dataset, f: int, clip_mu: float = DEFAULT_CLIP_MU) -> float:
    """Upper-clipped column mean; raises InsufficientData to abstain."""
    x = _columns(dataset, None)
    if x.shape[0] == 0:
        raise InsufficientData("participant has no scripts for the mean query")
    return float(min(x[:, f].mean(), clip_mu))


def local_var(dataset, f: int, clip_var: float = DEFAULT_CLIP_VAR) -> float:
    """Upper-clipped sample variance (n-1 denominator); abstains for n < 2."""
    x = _columns(dataset, None)
    if x.shape[0] < 2:
        raise InsufficientData("variance query needs at least two scripts")
    col = x[:, f]
    s = float(((col - col.mean()) ** 2).sum() / (x.shape[0] - 1))
    return min(s, clip_var)


@dataclass(eq=False)
class ColumnMoments:
    """Per-participant column means and variances, computed once and reused."""

    counts: np.ndarray     # (W,) rows per participant
    means: np.ndarray      # (W, F), zero where undefined
    variances: np.ndarray  # (W, F), zero where undefined

    def __post_init__(self):
        if self.means.shape != self.variances.shape or self.counts.shape != self.means.shape[:1]:
            raise InvalidInput("moment shapes disagree")

    @property
    def n_participants(self) -> int:
        return self.counts.size

    @property
    def n_features(self) -> int:
        return self.means.shape[1]


def participant_moments(participants: Sequence, mask=None) -> ColumnMoments:
    """Two-pass per-participant column moments in float64."""
    if not participants:
        raise InvalidInput("need at least one participant")
    first = _columns(participants[0], mask)
    n_features = first.shape[1]
    counts = np.zeros(len(participants), dtype=np.int64)
    means = np.zeros((len(participants), n_features))
    variances = np.zeros_like(means)
    for i, p in enumerate(participants):
        x = _columns(p, mask)
        n = x.shape[0]
        counts[i] = n
        if n >= 1:
            means[i] = x.mean(axis=0)
        if n >= 2:
            variances[i] = ((x - means[i]) ** 2).sum(axis=0) / (n - 1)
    return ColumnMoments(counts, means, variances)


def dp_fed_norm(participants: Sequence, q: float, z: float,
                clip_mu: float = DEFAULT_CLIP_MU, clip_var: float = DEFAULT_CLIP_VAR,
                rng: np.random.Generator | None = None,
                ledger: PrivacyLedger | None = None, mask=None,
                moments: ColumnMoments | None = None,
                variance_floor: float = VARIANCE_FLOOR) -> NormStats:
    """Run the 2F subsampled statistic queries and return floored stats.

    The rng stream is consumed in a fixed order (mean coins, variance
    coins, mean noise, variance noise), so a given seed fully determines
    the output. The ledger is charged one subsampled-Gaussian query per
    feature per phase, independent of who got sampled.
    """
    if rng is None:
        raise InvalidInput("dp_fed_norm requires an explicit rng")
    if not 0.0 < q <= 1.0:
        raise InvalidInput(f"sampling probability must be in (0, 1]: {q}")
    if z < 0:
        raise InvalidInput(f"noise multiplier must be non-negative: {z}")
    if clip_mu <= 0 or clip_var <= 0:
        raise InvalidInput("clip bounds must be positive")
    if variance_floor <= 0:
        raise InvalidInput(f"variance floor must be positive: {variance_floor}")
    if moments is None:
        moments = participant_moments(participants, mask)
    w = moments.n_participants
    n_features = moments.n_features

    coins_mu = rng.random((w, n_features)) < q
    coins_var = rng.random((w, n_features)) < q
    coins_mu &= (moments.counts >= 1)[:, None]
    coins_var &= (moments.counts >= 2)[:, None]

    clipped_mu = np.minimum(moments.means, clip_mu)
    clipped_var = np.minimum(moments.variances, clip_var)
    denom = q * w
    mu = (coins_mu * clipped_mu).sum(axis=0) / denom
    s = (coins_var * clipped_var).sum(axis=0) / denom
    mu = mu + gaussian_noise(noise_stddev(z, clip_mu, q, w), n_features, rng)
    s = s + gaussian_noise(noise_stddev(z, clip_var, q, w), n_features, rng)
    s = np.maximum(s, variance_floor)

    if ledger is not None:
        ledger.record("norm-mean", q, z, count=n_features)
        ledger.record("norm-var", q, z, count=n_features)
    return NormStats(mu, s, clip_mu, clip_var)


def exact_stats(x: np.ndarray, variance_floor: float = VARIANCE_FLOOR) -> NormStats:
    """Non-private pooled column statistics (no clipping, no noise)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInput("need a 2-d matrix with at least two rows")
    mu = x.mean(axis=0)
    s = ((x - mu) ** 2).sum(axis=0) / (x.shape[0] - 1)
    return NormStats(mu, np.maximum(s, variance_floor), math.inf, math.inf)


def _denominator(stats: NormStats, mode: str, variance_floor: float) -> np.ndarray:
    if mode not in NORMALIZE_MODES:
        raise InvalidInput(f"mode must be one of {NORMALIZE_MODES}: {mode!r}")
    s = np.maximum(stats.s, variance_floor)
    return np.sqrt(s) if mode == "std" else s


def normalize_matrix(x: np.ndarray, stats: NormStats, mode: str = "std",
                     variance_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """Center by mu and scale every column; total thanks to the floor."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != stats.n_features:
        raise InvalidInput(f"matrix has {x.shape[-1] if x.ndim else 0} columns, "
                           f"stats describe {stats.n_features}")
    denom = _denominator(stats, mode, variance_floor)
    out = x.astype(np.float64, copy=True)
    out -= stats.mu
    out /= denom
    return out.astype(x.dtype, copy=False) if x.dtype == np.float32 else out


def normalize(vec: FeatureVector | np.ndarray, stats: NormStats, mode: str = "std",
              variance_floor: float = VARIANCE_FLOOR):
    """Scale one feature vector; FeatureVector in, FeatureVector out."""
    if isinstance(vec, FeatureVector):
        values = normalize(vec.values, stats, mode, variance_floor)
        return FeatureVector(values, vec.label, vec.fp_types)
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (stats.n_features,):
        raise InvalidInput(f"vector length {v.size} does not match {stats.n_features}")
    return (v - stats.mu) / _denominator(stats, mode, variance_floor)
