"""System configuration and the flat key=value config-file format.

All quantities are SI unless the field comment says otherwise: bandwidth in
Hz, times in seconds, file sizes and cache capacity in bits, streaming rates
in bits per second.  Vector-valued fields (``F``, ``mu``, ``rho``) are
comma-separated in config files; a scalar is broadcast to length ``L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigurationError

_RHO_TOL = 1e-12  # request probabilities must sum to 1 within this


@dataclass
class PathLossModel:
    """Log-distance path loss PL(d) = A + 10*gamma*log10(d/d0), in dB."""

    intercept_db: float = 128.1     # A: loss at the reference distance
    exponent: float = 3.76          # gamma: path-loss exponent
    reference_distance_m: float = 1000.0  # d0


@dataclass
class SystemConfig:
    # network dimensions
    K: int = 7            # number of cells (one BS + one active user each)
    L: int = 6            # number of media files
    M: int = 7            # number of subcarriers
    N_T: int = 4          # transmit antennas per BS
    N_R: int = 2          # receive antennas per user

    # physical layer
    B_W: float = 1e6      # per-subcarrier bandwidth, Hz
    tau: float = 5e-3     # slot length, s
    inter_site_distance: float = 500.0  # m
    placement: str = "normal"   # user drop mode: "normal" (>80 m) or "edge" (>180 m)
    pathloss_intercept_db: float = 128.1
    pathloss_exponent: float = 3.76
    pathloss_ref_distance_m: float = 1000.0

    # media library
    F: tuple = (4.8e9,) * 6    # file sizes, bits (600 MByte default)
    mu: tuple = (2e6,) * 6     # per-file streaming rates, bits/s
    rho: tuple = (0.6, 0.3, 0.08, 0.01, 0.005, 0.005)  # request popularity

    # caching / timescales
    T_S: int = 8          # slots per segment frame
    T_C: float = 604800.0  # cache-update period, s (one week)
    B_C: float = 9.6e9    # per-BS cache capacity, bits
    urp_hold: int = 200   # slots per user-request-profile interval
    lc_sigma0: float = 0.05  # step scale sigma0 in sigma_i = sigma0/(i+1)

    # solver knobs
    sp_tol: float = 1e-5      # relative sum-power change stopping threshold
    sp_max_iter: int = 200
    dual_tol: float = 1e-6    # complementary-slackness tolerance (normalized)

    rng_seed: int = 1

    def __post_init__(self):
        self.validate()

    # -- derived quantities -------------------------------------------------

    @property
    def d(self) -> int:
        """Streams per user, coordinated mode."""
        return min(self.N_T, self.N_R)

    @property
    def d_comp(self) -> int:
        """Streams per user when all K BSs precode jointly."""
        return min(self.K * self.N_T, self.N_R)

    def pathloss_model(self) -> PathLossModel:
        return PathLossModel(self.pathloss_intercept_db,
                             self.pathloss_exponent,
                             self.pathloss_ref_distance_m)

    def mu_bar(self, pi: np.ndarray) -> np.ndarray:
        """Per-user rate targets in nats per subcarrier use for a request
        profile ``pi`` (0-based file indices)."""
        mu = np.asarray(self.mu, dtype=float)[np.asarray(pi, dtype=int)]
        return mu * math.log(2.0) / self.B_W

    # -- validation ---------------------------------------------------------

    def validate(self):
        if min(self.K, self.L, self.M, self.N_T, self.N_R, self.T_S) < 1:
            raise ConfigurationError("K, L, M, N_T, N_R, T_S must be positive")
        if self.N_T < 2:
            raise ConfigurationError(f"N_T must be >= 2, got {self.N_T}")
        if self.M < self.K:
            raise ConfigurationError(
                f"M >= K required (disjoint-subcarrier start needs one "
                f"subcarrier per user), got M={self.M} K={self.K}")
        for name in ("F", "mu", "rho"):
            vec = np.asarray(getattr(self, name), dtype=float)
            if vec.ndim == 0:
                vec = np.full(self.L, float(vec))
            if vec.shape != (self.L,):
                raise ConfigurationError(
                    f"{name} must have length L={self.L}, got {vec.shape}")
            object.__setattr__(self, name, tuple(vec.tolist()))
        if any(f <= 0 for f in self.F):
            raise ConfigurationError("file sizes F must be positive")
        if any(m <= 0 for m in self.mu):
            raise ConfigurationError("streaming rates mu must be positive")
        if abs(sum(self.rho) - 1.0) > _RHO_TOL:
            raise ConfigurationError(
                f"rho must sum to 1 within {_RHO_TOL}, got {sum(self.rho)!r}")
        if any(r < 0 for r in self.rho):
            raise ConfigurationError("rho entries must be nonnegative")
        if self.B_W <= 0 or self.tau <= 0 or self.T_C <= 0:
            raise ConfigurationError("B_W, tau, T_C must be positive")
        if self.B_C < 0:
            raise ConfigurationError("cache capacity B_C must be >= 0")
        if self.urp_hold < 1:
            raise ConfigurationError("urp_hold must be >= 1")
        if self.placement not in ("normal", "edge"):
            raise ConfigurationError(
                f"placement must be 'normal' or 'edge', got {self.placement!r}")


# ---------------------------------------------------------------------------
# config-file parsing: flat "key = value" lines, '#' comments
# ---------------------------------------------------------------------------

_INT_FIELDS = {"K", "L", "M", "N_T", "N_R", "T_S", "urp_hold", "rng_seed",
               "sp_max_iter"}
_VEC_FIELDS = {"F", "mu", "rho"}
_STR_FIELDS = {"placement"}


def _field_names():
    return {f.name for f in fields(SystemConfig)}


def _parse_value(key: str, text: str):
    text = text.strip()
    if key in _STR_FIELDS:
        return text
    if key in _VEC_FIELDS:
        parts = [p for p in text.split(",") if p.strip()]
        vals = tuple(float(p) for p in parts)
        return vals[0] if len(vals) == 1 else vals
    if key in _INT_FIELDS:
        return int(float(text))
    return float(text)


def _parse_fields(text: str) -> dict:
    """Flat key=value lines into a field dict.

    Unknown keys raise ConfigurationError (typos should fail loudly, not
    silently fall back to defaults).
    """
    known = _field_names()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        try:
            out[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key!r}: {exc}")
    return out


def parse_config_text(text: str) -> SystemConfig:
    """Parse flat key=value config text; unspecified fields keep defaults."""
    return SystemConfig(**_parse_fields(text))


def load_config(path: str, overrides: dict | None = None) -> SystemConfig:
    """Load a SystemConfig from ``path``, then apply overrides.

    Overrides use the same key set as the file, plus the virtual key ``mu0``
    which sets every entry of ``mu`` to one scalar (handy for rate sweeps).
    """
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config_text(fh.read())
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def known_config_keys() -> set:
    """Field names the parser accepts, plus the virtual override keys."""
    return _field_names() | {"mu0"}


def apply_overrides(cfg: SystemConfig, overrides: dict) -> SystemConfig:
    known = _field_names()
    updates = {}
    for key, val in overrides.items():
        if key == "mu0":
            updates["mu"] = (float(val),) * cfg.L
        elif key in known:
            updates[key] = _parse_value(key, str(val)) if isinstance(val, str) else val
        else:
            raise ConfigurationError(f"unknown override key {key!r}")
    return replace(cfg, **updates)


def config_snapshot(cfg: SystemConfig) -> dict:
    """Flat all-string view of every config field, in the same key=value
    vocabulary the parser accepts (manifest and report headers)."""
    snap = {}
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            snap[f.name] = ",".join(f"{v:.12g}" for v in val)
        elif isinstance(val, float):
            snap[f.name] = f"{val:.12g}"
        else:
            snap[f.name] = str(val)
    return snap
