"""Clipping, noise, and Renyi-DP accounting for subsampled Gaussians.

Every private query in the pipeline (one training round, one
normalization statistic) reduces to the same mechanism: Poisson
subsampling with rate q followed by a Gaussian whose standard deviation
is z times the query's L2 sensitivity. Accounting therefore only needs
the pair (q, z) per query. RDP is computed on a fixed grid of orders,
composed additively, and converted to (epsilon, delta) via
epsilon = min_alpha [ rdp(alpha) + log(1/delta) / (alpha - 1) ].

The RDP of one subsampled Gaussian follows the stable evaluation of the
moment series: a finite binomial sum in log space for integer orders
and the two-piece erfc series for fractional orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import CalibrationError, InvalidInput

DEFAULT_ORDERS = tuple(np.arange(1.25, 64.0 + 1e-9, 0.25)) + (128.0, 256.0)

Z_SEARCH_BOUNDS = (1e-2, 1e3)
Z_SEARCH_REL_TOL = 1e-3


def clip_l2(v, clip_norm: float) -> np.ndarray:
    """Scale v to L2 norm at most clip_norm (identity inside the ball)."""
    arr = np.asarray(v, dtype=float)
    if clip_norm <= 0 or not math.isfinite(clip_norm):
        raise InvalidInput(f"clip_norm must be positive and finite: {clip_norm}")
    if not np.isfinite(arr).all():
        raise InvalidInput("cannot clip a non-finite vector")
    norm = float(np.linalg.norm(arr))
    if norm > clip_norm:
        return arr * (clip_norm / norm)
    return arr.copy()


def gaussian_noise(sigma: float, shape, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0 or not math.isfinite(sigma):
        raise InvalidInput(f"sigma must be non-negative and finite: {sigma}")
    if sigma == 0.0:
        return np.zeros(shape)
    return rng.normal(0.0, sigma, shape)


def noise_stddev(z: float, sensitivity: float, q: float, participants: int) -> float:
    """Per-coordinate sigma of the aggregate: z * S / (q * W)."""
    if z < 0 or sensitivity <= 0:
        raise InvalidInput("need z >= 0 and sensitivity > 0")
    denom = q * participants
    if denom <= 0:
        raise InvalidInput(f"q * W must be positive: q={q}, W={participants}")
    return z * sensitivity / denom


def _log_erfc(x: float) -> float:
    # erfc(x) = erfcx(x) * exp(-x^2); erfcx stays representable for large x
    if x < 0.0:
        return math.log(special.erfc(x))
    return float(np.log(special.erfcx(x)) - x * x)


def _log_binom(n: float, k: int) -> float:
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def _log_sub(a: float, b: float) -> float:
    # log(exp(a) - exp(b)); requires a >= b
    if b == -math.inf:
        return a
    if b > a:
        raise InvalidInput("series produced a negative partial sum")
    if a == b:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _rdp_integer_order(q: float, z: float, alpha: int) -> float:
    k = np.arange(alpha + 1, dtype=float)
    terms = (special.gammaln(alpha + 1) - special.gammaln(k + 1)
             - special.gammaln(alpha - k + 1)
             + (alpha - k) * math.log1p(-q) + k * math.log(q)
             + k * (k - 1) / (2.0 * z * z))
    return float(special.logsumexp(terms)) / (alpha - 1)


# Truncation bound for the alternating tail: first omitted term, e^-30.
_FRAC_TERM_CUTOFF = -30.0
_FRAC_MAX_TERMS = 100_000


def _rdp_fractional_order(q: float, z: float, alpha: float) -> float:
    # Signed series split at z0, each half accumulated in log space.
    z2 = z * z
    z0 = z2 * math.log(1.0 / q - 1.0) + 0.5
    sqrt2z = math.sqrt(2.0) * z
    log_q, log_1mq = math.log(q), math.log1p(-q)
    log_half = math.log(0.5)
    log_a0 = log_a1 = -math.inf
    i = 0
    while True:
        coef = float(special.binom(alpha, i))
        log_coef = math.log(abs(coef)) if coef != 0.0 else -math.inf
        j = alpha - i
        log_t0 = log_coef + i * log_q + j * log_1mq
        log_t1 = log_coef + j * log_q + i * log_1mq
        log_e0 = log_half + _log_erfc((i - z0) / sqrt2z)
        log_e1 = log_half + _log_erfc((z0 - j) / sqrt2z)
        log_s0 = log_t0 + (i * i - i) / (2.0 * z2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * z2) + log_e1
        if coef >= 0.0:
            log_a0 = np.logaddexp(log_a0, log_s0)
            log_a1 = np.logaddexp(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < _FRAC_TERM_CUTOFF and i > alpha:
            break
        if i > _FRAC_MAX_TERMS:
            raise InvalidInput(f"moment series did not converge for q={q}, z={z}, alpha={alpha}")
    return float(np.logaddexp(log_a0, log_a1)) / (alpha - 1.0)


@lru_cache(maxsize=4096)
def _rdp_grid_cached(q: float, z: float, orders: tuple) -> tuple:
    out = []
    for alpha in orders:
        if float(alpha).is_integer():
            out.append(_rdp_integer_order(q, z, int(alpha)))
        else:
            out.append(_rdp_fractional_order(q, z, float(alpha)))
    return tuple(out)


def rdp_subsampled_gaussian(q: float, z: float, orders=DEFAULT_ORDERS) -> np.ndarray:
    """RDP at each order for one Poisson-subsampled Gaussian query."""
    if not 0.0 < q <= 1.0:
        raise InvalidInput(f"sampling rate must be in (0, 1]: {q}")
    if z <= 0 or not math.isfinite(z):
        raise InvalidInput(f"noise multiplier must be positive and finite: {z}")
    orders_arr = np.asarray(orders, dtype=float)
    if orders_arr.ndim != 1 or orders_arr.size == 0 or (orders_arr <= 1.0).any():
        raise InvalidInput("orders must be a non-empty array of values > 1")
    if q == 1.0:
        return orders_arr / (2.0 * z * z)
    return np.array(_rdp_grid_cached(float(q), float(z), tuple(float(a) for a in orders_arr)))


def rdp_to_epsilon(rdp, orders, delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must be in (0, 1): {delta}")
    rdp = np.asarray(rdp, dtype=float)
    orders = np.asarray(orders, dtype=float)
    if rdp.shape != orders.shape:
        raise InvalidInput("rdp and orders shape mismatch")
    if np.isinf(rdp).all():
        return math.inf
    eps = rdp + math.log(1.0 / delta) / (orders - 1.0)
    return float(eps.min())


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    mechanism: str
    q: float
    z: float
    count: int


@dataclass
class PrivacyLedger:
    """Additive RDP composition over every query charged to a run."""

    orders: tuple = DEFAULT_ORDERS
    entries: list[LedgerEntry] = field(default_factory=list)
    _rdp: np.ndarray = None

    def __post_init__(self):
        if self._rdp is None:
            self._rdp = np.zeros(len(self.orders))

    def record(self, mechanism: str, q: float, z: float, count: int = 1) -> None:
        if count < 1:
            raise InvalidInput(f"count must be >= 1: {count}")
        if z == 0.0:
            # no-noise mode: the run is unaccounted, epsilon is infinite
            self._rdp = self._rdp + math.inf
        else:
            self._rdp = self._rdp + count * rdp_subsampled_gaussian(q, z, self.orders)
        self.entries.append(LedgerEntry(mechanism, q, z, count))

    @property
    def total_rdp(self) -> np.ndarray:
        return self._rdp.copy()

    def epsilon(self, delta: float) -> float:
        if not self.entries:
            raise InvalidInput("cannot convert an empty ledger")
        return rdp_to_epsilon(self._rdp, np.asarray(self.orders), delta)


@dataclass(frozen=True, slots=True)
class PlannedQuery:
    """One homogeneous block of queries in a calibration plan.

    z None means the block runs at the noise multiplier being searched;
    a fixed z composes as-is (already-calibrated phase).
    """

    q: float
    count: int
    z: float | None = None

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise InvalidInput(f"sampling rate must be in (0, 1]: {self.q}")
        if self.count < 1:
            raise InvalidInput(f"count must be >= 1: {self.count}")
        if self.z is not None and self.z <= 0:
            raise InvalidInput(f"fixed z must be positive: {self.z}")


def plan_epsilon(plan, z: float, delta: float, orders=DEFAULT_ORDERS) -> float:
    orders_arr = np.asarray(orders, dtype=float)
    total = np.zeros_like(orders_arr)
    for entry in plan:
        z_eff = entry.z if entry.z is not None else z
        total += entry.count * rdp_subsampled_gaussian(entry.q, z_eff, orders_arr)
    return rdp_to_epsilon(total, orders_arr, delta)


def calibrate_noise(target_epsilon: float, delta: float, plan,
                    orders=DEFAULT_ORDERS,
                    z_bounds: tuple[float, float] = Z_SEARCH_BOUNDS,
                    rel_tol: float = Z_SEARCH_REL_TOL) -> float:
    """Smallest z (on the bisection grid) whose replayed epsilon meets target.

    target_epsilon = inf is the no-noise sentinel and returns z = 0.
    """
    plan = list(plan)
    if not plan:
        raise InvalidInput("empty query plan")
    if target_epsilon <= 0:
        raise InvalidInput(f"target epsilon must be positive: {target_epsilon}")
    if math.isinf(target_epsilon):
        return 0.0
    if all(entry.z is not None for entry in plan):
        raise InvalidInput("plan has no entry at the searched noise level")
    lo, hi = z_bounds
    if plan_epsilon(plan, lo, delta, orders) <= target_epsilon:
        return lo
    if plan_epsilon(plan, hi, delta, orders) > target_epsilon:
        raise CalibrationError(
            f"epsilon {target_epsilon} unreachable with z in [{lo}, {hi}]")
    while hi / lo - 1.0 > rel_tol:
        mid = math.sqrt(lo * hi)
        if plan_epsilon(plan, mid, delta, orders) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi
