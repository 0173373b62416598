"""Topology generation and per-slot MIMO channel realizations.

Geometry: one BS per hexagonal cell (inter-site distance D), one active user
per cell dropped uniformly in the cell's Voronoi hexagon subject to a minimum
serving distance (80 m for "normal" drops, 180 m for cell-"edge" drops).
Channels H[m,k,n] (user k <- BS n on subcarrier m) have i.i.d. circularly
symmetric complex Gaussian entries of variance g[k,n], the linear path gain.

Determinism: every slot draws from an RNG stream keyed by
(master_seed, slot_index, subcarrier), so slots can be generated in any
order (or in parallel) and still match a sequential run bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .config import PathLossModel, SystemConfig
from .errors import ConfigurationError

MIN_SERVING_DISTANCE = {"normal": 80.0, "edge": 180.0}  # meters
_PLACEMENT_ATTEMPTS = 10000

# Tr(H H^dag) above this counts as a usable direct link; exact zeros occur
# with probability zero but g=0 test setups produce them deliberately.
FEASIBLE_TRACE_TOL = 1e-30


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray      # (K, 2) meters
    user_positions: np.ndarray    # (K, 2) meters
    inter_site_distance: float
    placement_mode: str
    path_gains: np.ndarray        # (K, K), g[k, n] = gain user k <- BS n

    @property
    def K(self) -> int:
        return self.bs_positions.shape[0]


@dataclass(frozen=True)
class ChannelState:
    """Per-slot channel: H[m, k, n] is the N_R x N_T block user k <- BS n."""

    H: np.ndarray       # complex (M, K, K, N_R, N_T)
    slot_index: int

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def N_R(self) -> int:
        return self.H.shape[3]

    @property
    def N_T(self) -> int:
        return self.H.shape[4]

    def composite(self) -> np.ndarray:
        """Stacked per-user channel [H[m,k,1], ..., H[m,k,K]] of shape
        (M, K, N_R, K*N_T), seen by a joint transmission across all BSs."""
        M, K, _, N_R, N_T = self.H.shape
        # blocks ordered by transmitting BS: columns n*N_T:(n+1)*N_T <- BS n
        return np.transpose(self.H, (0, 1, 3, 2, 4)).reshape(M, K, N_R, K * N_T)

    def is_feasible(self) -> bool:
        """Every direct link H[m,k,k] carries nonzero energy."""
        idx = np.arange(self.K)
        direct = self.H[:, idx, idx]                     # (M, K, N_R, N_T)
        tr = np.sum(np.abs(direct) ** 2, axis=(-2, -1))  # Tr(H H^dag)
        return bool(np.all(tr > FEASIBLE_TRACE_TOL))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def hex_centers(K: int, D: float) -> np.ndarray:
    """First K cell centers of a hex lattice with spacing D, spiral order:
    center cell first, then rings of 6, 12, ... cells."""
    # axial coordinates -> cartesian with neighbor distance D
    def to_xy(q, r):
        return (D * (q + 0.5 * r), D * (math.sqrt(3.0) / 2.0) * r)

    coords = [(0, 0)]
    # walking these directions ring-many steps each traces a full ring
    # counterclockwise starting from the eastern cell (ring, 0)
    walk = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)]
    ring = 1
    while len(coords) < K:
        q, r = ring, 0
        for dq, dr in walk:
            for _ in range(ring):
                if len(coords) < K:
                    coords.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    return np.array([to_xy(q, r) for q, r in coords[:K]], dtype=float)


_HEX_NORMALS = np.array(
    [[math.cos(a), math.sin(a)] for a in np.deg2rad(np.arange(0, 360, 60))])


def _in_hex_cell(offset: np.ndarray, D: float) -> bool:
    """True if a point at ``offset`` from its BS lies inside the Voronoi
    hexagon of a lattice with spacing D (strictly closer to this BS than to
    any of the 6 ideal neighbors)."""
    return bool(np.all(_HEX_NORMALS @ offset <= D / 2.0 + 1e-9))


def path_gain(distance, model: PathLossModel):
    """Linear power gain 10^(-PL/10), PL = A + 10*gamma*log10(d/d0)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path_gain requires distance > 0")
    pl_db = model.intercept_db + 10.0 * model.exponent * np.log10(d / model.reference_distance_m)
    gain = 10.0 ** (-pl_db / 10.0)
    return float(gain) if np.isscalar(distance) else gain


def build_topology(cfg: SystemConfig, mode: str | None = None,
                   rng: np.random.Generator | None = None) -> Topology:
    """Drop K BSs on hex centers and one user per cell.

    Users are rejection-sampled uniformly over the hexagonal cell with the
    mode's minimum serving distance; a config whose minimum distance exceeds
    the cell circumradius cannot be satisfied and raises ConfigurationError.
    """
    mode = mode or cfg.placement
    if mode not in MIN_SERVING_DISTANCE:
        raise ConfigurationError(f"unknown placement mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=cfg.rng_seed, spawn_key=(0xAB,)))
    D = cfg.inter_site_distance
    min_dist = MIN_SERVING_DISTANCE[mode]
    circumradius = D / math.sqrt(3.0)
    bs = hex_centers(cfg.K, D)

    users = np.empty_like(bs)
    for k in range(cfg.K):
        for attempt in range(_PLACEMENT_ATTEMPTS):
            # uniform in the bounding disc, then hex + min-distance tests
            u = rng.uniform(-circumradius, circumradius, size=2)
            if not _in_hex_cell(u, D):
                continue
            if np.hypot(*u) < min_dist:
                continue
            users[k] = bs[k] + u
            break
        else:
            raise ConfigurationError(
                f"could not place user {k}: min distance {min_dist} m "
                f"does not fit a cell of inter-site distance {D} m")

    dist = np.linalg.norm(users[:, None, :] - bs[None, :, :], axis=-1)  # (K, K)
    gains = path_gain(dist, cfg.pathloss_model())
    return Topology(bs_positions=bs, user_positions=users,
                    inter_site_distance=D, placement_mode=mode,
                    path_gains=gains)


# ---------------------------------------------------------------------------
# channel draws
# ---------------------------------------------------------------------------

def slot_rng(master_seed: int, slot_index: int, subcarrier: int,
             stream: int = 0) -> np.random.Generator:
    """Independent generator for one (slot, subcarrier) unit of work."""
    return np.random.default_rng(np.random.SeedSequence(
        entropy=master_seed, spawn_key=(stream, slot_index, subcarrier)))


def draw_channel(topo: Topology, cfg: SystemConfig, slot_index: int,
                 mixer=None) -> ChannelState:
    """One slot's channel tensor, entries CN(0, g[k,n]).

    Entries are two independent real Gaussians of variance g/2.  Draws are
    independent across subcarriers by default; ``mixer``, if given, maps the
    i.i.d. standard-normal tensor (M, K, K, N_R, 2*N_T stacked re/im) to a
    correlated one before scaling; the hook for correlated-subcarrier models.
    """
    K, M = cfg.K, cfg.M
    if topo.path_gains.shape != (K, K):
        raise ConfigurationError("topology does not match config dimensions")
    raw = np.empty((M, K, K, cfg.N_R, 2 * cfg.N_T))
    for m in range(M):
        raw[m] = slot_rng(cfg.rng_seed, slot_index, m).standard_normal(
            (K, K, cfg.N_R, 2 * cfg.N_T))
    if mixer is not None:
        raw = mixer(raw)
    re, im = raw[..., :cfg.N_T], raw[..., cfg.N_T:]
    scale = np.sqrt(topo.path_gains / 2.0)[None, :, :, None, None]
    H = scale * (re + 1j * im)
    return ChannelState(H=H, slot_index=slot_index)


def unit_gain_topology(K: int) -> Topology:
    """All-ones path gains at degenerate geometry: test instances where the
    absolute power scale should stay O(1)."""
    z = np.zeros((K, 2))
    return Topology(bs_positions=z, user_positions=z, inter_site_distance=0.0,
                    placement_mode="normal", path_gains=np.ones((K, K)))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_topology_csv(topo: Topology, path: str):
    """One CSV with BS rows then user rows; user rows carry the path-gain row
    toward every BS."""
    K = topo.K
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "id", "x_m", "y_m", "serving_bs"]
                        + [f"g_{n}" for n in range(K)])
        for k in range(K):
            writer.writerow(["bs", k, f"{topo.bs_positions[k, 0]:.12g}",
                             f"{topo.bs_positions[k, 1]:.12g}", ""] + [""] * K)
        for k in range(K):
            writer.writerow(["user", k, f"{topo.user_positions[k, 0]:.12g}",
                             f"{topo.user_positions[k, 1]:.12g}", k,
                             *[f"{g:.12g}" for g in topo.path_gains[k]]])
