"""Playback-buffer bookkeeping and backhaul accounting.

Media files are streamed in segments of T_S mu tau bits, one frame of
playback each.  A user's buffer fills with whatever the physical layer
delivered during the slot and drains at the constant playback rate; an
interruption is the event of the drain finding too few bits.  Backhaul
counters track the online payload each scheme ships to the base stations
plus the amortized cost of refreshing the caches.

All accounting is in real arithmetic; this is a rate-level model, not a
codec.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError

SCHEMES = ("proposed", "coordinated", "conventional_comp")


@dataclass(frozen=True)
class PlaybackState:
    """One user's streaming progress.

    buffer_bits holds undrained payload, pre-filled with one segment so the
    first slots of a fresh stream do not trivially interrupt.  The segment
    counters track reassembly: a segment decodes exactly when
    segment_bits of parity have accumulated since the last decode.
    """

    buffer_bits: float
    segment_bits: float
    segment_progress_bits: float = 0.0
    segments_decoded: int = 0
    interruptions: int = 0

    def __post_init__(self):
        if self.buffer_bits < 0 or self.segment_bits <= 0:
            raise ConfigurationError("buffer must be >= 0 and segment > 0")

    @classmethod
    def fresh(cls, mu: float, tau: float, T_S: int) -> "PlaybackState":
        """Prebuffered start for a stream played at mu bits/s."""
        if mu <= 0 or tau <= 0 or T_S < 1:
            raise ConfigurationError("need mu > 0, tau > 0, T_S >= 1")
        seg = T_S * mu * tau
        return cls(buffer_bits=seg, segment_bits=seg)

    @property
    def decoded_bits(self) -> float:
        return self.segments_decoded * self.segment_bits


def step_playback(state: PlaybackState, delivered_bits: float,
                  mu: float, tau: float) -> PlaybackState:
    """Advance one slot: deposit the slot's delivery, drain one slot of
    playback, and count an interruption if the drain cannot be served."""
    if delivered_bits < 0:
        raise ConfigurationError("delivered bits must be nonnegative")
    buf = state.buffer_bits + delivered_bits
    progress = state.segment_progress_bits + delivered_bits
    decoded = state.segments_decoded
    while progress >= state.segment_bits * (1 - 1e-12):
        progress -= state.segment_bits
        decoded += 1
    need = mu * tau
    if buf >= need * (1 - 1e-12):
        buf -= need
        stalls = 0
    else:
        stalls = 1
    return replace(state, buffer_bits=max(buf, 0.0),
                   segment_progress_bits=progress,
                   segments_decoded=decoded,
                   interruptions=state.interruptions + stalls)


@dataclass
class BackhaulMeter:
    """Accumulates backhaul consumption for one scheme's run.

    The static part of the accounting (user count, common streaming rate,
    slot length) is fixed at construction; counters only ever grow.  Online
    traffic is counted in payload units (one unit = one user-slot of
    streaming payload, mu0 tau bits) so that constant-rate schemes report
    their average rate without float drift: units mu0 / slots divides two
    exactly held integers.
    """

    K: int
    mu0: float
    tau: float
    payload_units: int = 0
    cache_update_bits: float = 0.0
    slots: int = 0

    def __post_init__(self):
        if self.K < 1 or self.mu0 < 0 or self.tau <= 0:
            raise ConfigurationError("need K >= 1, mu0 >= 0, tau > 0")

    @property
    def online_bits(self) -> float:
        return self.payload_units * self.mu0 * self.tau

    @property
    def elapsed(self) -> float:
        return self.slots * self.tau

    @property
    def online_rate(self) -> float:
        if self.slots <= 0:
            return 0.0
        return self.payload_units * self.mu0 / self.slots

    @property
    def average_rate(self) -> float:
        """Total backhaul bits per elapsed second."""
        if self.slots <= 0:
            return 0.0
        return self.online_rate + self.cache_update_bits / self.elapsed


def account_backhaul(meter: BackhaulMeter, S: int, scheme: str) -> BackhaulMeter:
    """Charge one slot of online payload traffic.

    proposed: cache-served slots (S = 1) ship nothing, the rest ship every
    user's payload once.  coordinated: every slot ships every user's
    payload once.  conventional_comp: joint transmission without caches
    needs every user's payload at every one of the K stations.
    """
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme '{scheme}'")
    if scheme == "proposed":
        units = 0 if S else meter.K
    elif scheme == "coordinated":
        units = meter.K
    else:
        units = meter.K * meter.K
    meter.payload_units += units
    meter.slots += 1
    return meter


def account_cache_update(meter: BackhaulMeter, q, F) -> BackhaulMeter:
    """Charge one cache refresh: every station receives its q_l F_l of
    parity bits per file."""
    q = np.asarray(q, dtype=float)
    F = np.asarray(F, dtype=float)
    meter.cache_update_bits += meter.K * float(q @ F)
    return meter


def backhaul_rate_formula(q, urp_samples, mu0: float, F, T_C: float,
                          K: int) -> float:
    """Average backhaul rate of the cache-assisted scheme.

    Monte-Carlo over request profiles of the online term
    K (1 - min_k q_{pi_k}) mu0, plus the deterministic refresh term
    K sum_l q_l F_l / T_C.
    """
    from .cache import q_min_of

    if T_C <= 0:
        raise ConfigurationError("cache refresh period must be positive")
    q = np.asarray(q, dtype=float)
    F = np.asarray(F, dtype=float)
    samples = list(urp_samples)
    if not samples:
        raise ConfigurationError("need at least one request-profile sample")
    online = float(np.mean([K * (1.0 - q_min_of(q, pi)[0]) * mu0
                            for pi in samples]))
    return online + K * float(q @ F) / T_C
