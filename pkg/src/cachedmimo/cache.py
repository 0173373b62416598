"""Randomized cache control for opportunistic joint transmission.

Each base station stores, for every file l, a random fraction q_l of coded
parity bits.  A requested file can be served jointly by all stations during
a slot only if every station holds the parity bits scheduled for that slot,
which happens for a fraction min_k q_{pi_k} of the slots in a frame.  The
cache control vector q is tuned on the slow timescale by projected
stochastic subgradient descent on the average transmit power.

Indices are 0-based throughout: request profiles hold file indices in
0..L-1 and the reported minimizer k* is a 0-based user index.
"""

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

EPS_NUM = 1e-8


@dataclass(frozen=True)
class CacheControlVector:
    """Per-file cached fractions q in [0, 1]^L."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ConfigurationError("q must be a nonempty 1-D vector")
        if not np.all(np.isfinite(q)):
            raise ConfigurationError("q must be finite")
        if q.min() < -EPS_NUM or q.max() > 1 + EPS_NUM:
            raise ConfigurationError("q entries must lie in [0, 1]")
        object.__setattr__(self, "q", np.clip(q, 0.0, 1.0))

    @property
    def L(self) -> int:
        return self.q.size

    def occupancy(self, F) -> float:
        """Cache bits consumed: sum_l F_l q_l."""
        return float(np.asarray(F, dtype=float) @ self.q)


@dataclass(frozen=True)
class CacheSchedule:
    """Frame-periodic cache-state schedule for one (q, pi) pair.

    The index set T_S holds the 0-based frame positions whose slots are
    served from the caches (S = 1).  It is drawn once per (q, pi) pair and
    reused for every frame until either changes.
    """

    T_S: int
    index_set: tuple
    q_min: float

    def __post_init__(self):
        if self.T_S < 1:
            raise ConfigurationError("T_S must be >= 1")
        idx = tuple(sorted(int(i) for i in self.index_set))
        if any(i < 0 or i >= self.T_S for i in idx):
            raise ConfigurationError("index set entries must lie in 0..T_S-1")
        if len(set(idx)) != len(idx):
            raise ConfigurationError("index set entries must be distinct")
        object.__setattr__(self, "index_set", idx)

    @property
    def n_comp(self) -> int:
        return len(self.index_set)

    @property
    def pattern(self) -> np.ndarray:
        """Length-T_S 0/1 array, one frame of S values."""
        out = np.zeros(self.T_S, dtype=int)
        out[list(self.index_set)] = 1
        return out

    def indicator(self, t) -> np.ndarray:
        """S(t) for scalar or array slot indices."""
        pos = np.asarray(t, dtype=int) % self.T_S
        return self.pattern[pos]


def round_half_toward_zero(x: float) -> int:
    """Nearest integer for x >= 0, with exact halves rounded down."""
    fl = np.floor(x)
    return int(fl) + int(x - fl > 0.5)


def project_cache(q_raw, F, B_C: float) -> CacheControlVector:
    """Euclidean projection onto {q in [0,1]^L : sum_l F_l q_l <= B_C}.

    Box clipping first; if the capacity constraint still binds, the
    projection is q_l = clip(q_raw_l - nu F_l, 0, 1) with the multiplier nu
    located by bisection and then polished to the exact piecewise-linear
    root, so the capacity holds with equality to machine precision (and
    B_C = 0 yields exact zeros).
    """
    q_raw = np.asarray(q_raw, dtype=float)
    F = np.asarray(F, dtype=float)
    if q_raw.shape != F.shape or q_raw.ndim != 1:
        raise ConfigurationError("q_raw and F must be matching 1-D vectors")
    if np.any(F <= 0):
        raise ConfigurationError("file sizes must be positive")
    if B_C < 0:
        raise ConfigurationError("cache size must be nonnegative")

    box = np.clip(q_raw, 0.0, 1.0)
    if float(F @ box) <= B_C + EPS_NUM * max(1.0, B_C):
        return CacheControlVector(box)

    def q_of(nu):
        return np.clip(q_raw - nu * F, 0.0, 1.0)

    lo, hi = 0.0, float(np.max(q_raw / F)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(F @ q_of(mid)) > B_C:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break

    # exact root on the linear piece the bracket landed in: free entries
    # satisfy q_l = q_raw_l - nu F_l, saturated ones contribute constants
    nu = 0.5 * (lo + hi)
    for _ in range(q_raw.size + 1):
        z = q_raw - nu * F
        free = (z > 0.0) & (z < 1.0)
        ones = z >= 1.0
        denom = float(F[free] @ F[free])
        if denom == 0.0:
            break
        nu_new = (float(F[free] @ q_raw[free]) + float(F[ones].sum()) - B_C) / denom
        if nu_new == nu:
            break
        nu = nu_new
    q = q_of(max(nu, 0.0))
    return CacheControlVector(q)


def q_min_of(q, pi) -> tuple:
    """Smallest cached fraction among the requested files.

    Returns (value, k_star) where k_star is the smallest user index
    attaining the minimum; the tie-break is deterministic so repeated
    evaluations pick the same coordinate.
    """
    qv = q.q if isinstance(q, CacheControlVector) else np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=int)
    if pi.ndim != 1 or pi.size == 0:
        raise ConfigurationError("request profile must be a nonempty 1-D vector")
    if pi.min() < 0 or pi.max() >= qv.size:
        raise ConfigurationError("request profile indexes a missing file")
    vals = qv[pi]
    k_star = int(np.argmin(vals))
    return float(vals[k_star]), k_star


def generate_cache_schedule(q, pi, T_S: int, rng: np.random.Generator) -> CacheSchedule:
    """Draw the frame index set for one (q, pi) pair.

    |T_S set| = round(q_min T_S) positions are sampled uniformly without
    replacement; exact halves round toward zero.  The schedule is meant to
    be drawn once and reused until q or pi changes.

    The set is the length-n prefix of one full permutation of the frame, so
    two draws from generators in the same state are nested whenever their
    sizes are ordered.  Paired runs that differ only in cached fraction then
    disagree on as few slots as possible.
    """
    q_min, _ = q_min_of(q, pi)
    n = round_half_toward_zero(q_min * T_S)
    idx = rng.permutation(T_S)[:n]
    return CacheSchedule(T_S=T_S, index_set=tuple(int(i) for i in idx), q_min=q_min)


def comp_probability(q, pi, scheme: str = "mds_random") -> float:
    """Fraction of slots servable by joint transmission.

    mds_random: coded placement aligned across stations gives min_k q_{pi_k}.
    brute_force: independent uncoded placement needs every one of the K
    stations to hold every one of the K requested files, prod_k q_{pi_k}^K.
    """
    qv = q.q if isinstance(q, CacheControlVector) else np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=int)
    if scheme == "mds_random":
        return q_min_of(qv, pi)[0]
    if scheme == "brute_force":
        return float(np.prod(qv[pi] ** pi.size))
    raise ConfigurationError(f"unknown cache scheme '{scheme}'")


def noisy_subgradient(q, pi, P_samples: Sequence[float],
                      P_tilde_samples: Sequence[float]) -> np.ndarray:
    """Single-interval stochastic subgradient of the average power in q.

    Only the coordinate of the file attaining the cached-fraction minimum
    moves, by the difference of the two modes' sample-mean powers.  Both
    sample sets must be nonempty; the caller is responsible for forcing a
    dedicated solve when a mode never occurred during the interval.
    """
    qv = q.q if isinstance(q, CacheControlVector) else np.asarray(q, dtype=float)
    P = np.asarray(P_samples, dtype=float)
    Pt = np.asarray(P_tilde_samples, dtype=float)
    if P.size == 0 or Pt.size == 0:
        raise ConfigurationError("both sample sets must be nonempty")
    _, k_star = q_min_of(qv, pi)
    g = np.zeros(qv.size)
    g[int(np.asarray(pi, dtype=int)[k_star])] = float(Pt.mean() - P.mean())
    return g


def default_step_rule(sigma0: float) -> Callable[[int], float]:
    """Diminishing steps sigma0 / i (square-summable, non-summable)."""
    if sigma0 <= 0:
        raise ConfigurationError("sigma0 must be positive")

    def rule(i: int) -> float:
        return sigma0 / max(i, 1)

    return rule


@dataclass
class LcState:
    """Slow-timescale cache controller state.

    Holds the current control vector, the interval counter feeding the step
    rule, and the per-interval power accumulators for the two transmission
    modes.  One owner updates it at interval boundaries; sample feeding is
    plain order-independent accumulation.
    """

    q: CacheControlVector
    F: np.ndarray
    B_C: float
    step_rule: Callable[[int], float]
    interval_index: int = 1
    P_sum: float = 0.0
    P_count: int = 0
    P_tilde_sum: float = 0.0
    P_tilde_count: int = 0

    @classmethod
    def initial(cls, L: int, F, B_C: float, sigma0: float = 1.0) -> "LcState":
        """Start from q = 0 with the default diminishing step rule."""
        F = np.asarray(F, dtype=float)
        if F.shape != (L,):
            raise ConfigurationError("F must have one size per file")
        return cls(q=CacheControlVector(np.zeros(L)), F=F, B_C=float(B_C),
                   step_rule=default_step_rule(sigma0))

    def add_sample(self, comp: bool, power: float) -> None:
        if comp:
            self.P_tilde_sum += power
            self.P_tilde_count += 1
        else:
            self.P_sum += power
            self.P_count += 1

    def samples(self) -> tuple:
        P = [self.P_sum / self.P_count] if self.P_count else []
        Pt = [self.P_tilde_sum / self.P_tilde_count] if self.P_tilde_count else []
        return P, Pt


def lc_update(state: LcState, g: np.ndarray) -> LcState:
    """One projected-subgradient step; returns the next-interval state."""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ConfigurationError("subgradient must be finite")
    sigma = state.step_rule(state.interval_index)
    q_next = project_cache(state.q.q - sigma * g, state.F, state.B_C)
    return replace(state, q=q_next, interval_index=state.interval_index + 1,
                   P_sum=0.0, P_count=0, P_tilde_sum=0.0, P_tilde_count=0)


def expected_objective(q, oracle, pi_samples) -> tuple:
    """Monte-Carlo average transmit power under control vector q.

    oracle(pi) must return the pair (E[P | pi], E[P_tilde | pi]) of
    conditional mean powers for the two modes.  Returns (estimate,
    standard error).
    """
    phis = []
    for pi in pi_samples:
        a, b = oracle(np.asarray(pi, dtype=int))
        q_min, _ = q_min_of(q, pi)
        phis.append((1.0 - q_min) * a + q_min * b)
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        raise ConfigurationError("need at least one request-profile sample")
    se = float(phis.std(ddof=1) / np.sqrt(phis.size)) if phis.size > 1 else 0.0
    return float(phis.mean()), se


def uniform_cache_vector(L: int, F, B_C: float) -> CacheControlVector:
    """Capacity split evenly across files: q_l = clip(B_C / (L F_l), 0, 1)."""
    F = np.asarray(F, dtype=float)
    if np.any(F <= 0):
        raise ConfigurationError("file sizes must be positive")
    return CacheControlVector(np.clip(B_C / (L * F), 0.0, 1.0))
