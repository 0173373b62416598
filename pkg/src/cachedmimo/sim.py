"""Mixed-timescale experiment engine.

One run couples three clocks.  Per slot, a fresh channel is drawn and the
precoder is solved in the mode the cache schedule selects.  Per request
interval, the user request profile changes, playback restarts on the newly
requested files, and the cache controller takes one projected-subgradient
step.  Per cache-update period, stations refresh their stored parity bits.

Determinism contract: everything random is keyed off (cfg.rng_seed, named
stream, index), never off call order.  Channels use (seed, slot,
subcarrier), request profiles (seed, interval index), schedules (seed,
interval index).  Runs of different schemes under one seed therefore see
identical channels and request sequences, which is what makes paired-seed
scheme comparisons sharp: on a slot both schemes operate in coordinated
mode they compute the exact same precoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cache import (LcState, generate_cache_schedule, lc_update,
                    noisy_subgradient, q_min_of, uniform_cache_vector)
from .channel import build_topology, draw_channel
from .config import SystemConfig, config_snapshot
from .errors import ConfigurationError, SolverError
from .precoder import (RateConstraint, SolverParams, algorithm_sp_batch,
                       comp_initial_point, sum_power)
from .streaming import (BackhaulMeter, PlaybackState, account_backhaul,
                        account_cache_update, step_playback)

RUN_SCHEMES = ("proposed", "coordinated", "conventional_comp",
               "uniform_caching")
BASELINES = ("coordinated", "conventional_comp", "uniform_caching")

# named RNG streams; channel slots use stream 0 and topology 0xAB
_URP_STREAM = 0xCB
_SCHED_STREAM = 0xCC


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequestProfile:
    """One interval's file requests: user k streams file pi[k] on every slot
    in [interval_start, interval_end] (inclusive)."""

    pi: np.ndarray
    interval_start: int = 0
    interval_end: int = 0

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=int)
        if pi.ndim != 1 or pi.size == 0:
            raise ConfigurationError("pi must be a nonempty 1-D index vector")
        if pi.min() < 0:
            raise ConfigurationError("file indices must be >= 0")
        if self.interval_end < self.interval_start:
            raise ConfigurationError("interval_end must be >= interval_start")
        object.__setattr__(self, "pi", pi)

    @property
    def K(self) -> int:
        return int(self.pi.size)

    @property
    def n_slots(self) -> int:
        return self.interval_end - self.interval_start + 1

    def covers(self, t: int) -> bool:
        return self.interval_start <= t <= self.interval_end


@dataclass(frozen=True)
class ExperimentResult:
    """Aggregates of one run plus the per-slot log the CSV writers consume.

    lc_trace holds one row per completed request interval of the proposed
    scheme (empty for baselines); slot_log maps column name to a length
    horizon_slots array.
    """

    scheme: str
    seed: int
    horizon_slots: int
    avg_sum_power_w: float
    avg_sum_power_db: float
    avg_backhaul_bps: float
    interruption_count: int
    lc_trace: tuple
    sp_convergence_stats: dict
    config: dict
    slot_log: dict


# ---------------------------------------------------------------------------
# request process
# ---------------------------------------------------------------------------

def draw_urp(rho, K: int, rng: np.random.Generator,
             interval_start: int = 0, interval_end: int = 0) -> RequestProfile:
    """K i.i.d. categorical draws from the file-popularity vector rho."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or rho.size == 0:
        raise ConfigurationError("rho must be a nonempty probability vector")
    if np.any(rho < 0) or abs(float(rho.sum()) - 1.0) > 1e-9:
        raise ConfigurationError("rho must be nonnegative and sum to 1")
    pi = rng.choice(rho.size, size=int(K), p=rho)
    return RequestProfile(pi=pi, interval_start=interval_start,
                          interval_end=interval_end)


def _stream_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(stream, index)))


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

def _solve_batch(states, rc, mode, inits, params, where):
    try:
        return algorithm_sp_batch(states, rc, mode=mode, inits=inits,
                                  params=params)
    except SolverError as exc:
        raise type(exc)(f"{where}: {exc}") from exc


def _run_experiment(cfg: SystemConfig, horizon_slots: int,
                    scheme: str) -> ExperimentResult:
    if scheme not in RUN_SCHEMES:
        raise ConfigurationError(f"unknown scheme '{scheme}'")
    horizon_slots = int(horizon_slots)
    if horizon_slots < 1:
        raise ConfigurationError("horizon must be at least one slot")

    topo = build_topology(cfg)
    params = SolverParams(eps_sp=cfg.sp_tol, eps_dual=cfg.dual_tol,
                          max_iter=cfg.sp_max_iter)
    F = np.asarray(cfg.F, dtype=float)
    mu = np.asarray(cfg.mu, dtype=float)
    meter = BackhaulMeter(K=cfg.K, mu0=float(np.mean(mu)), tau=cfg.tau)
    account_as = {"proposed": "proposed", "uniform_caching": "proposed",
                  "coordinated": "coordinated",
                  "conventional_comp": "conventional_comp"}[scheme]
    refresh_period = max(1, int(round(cfg.T_C / cfg.tau)))
    cached = scheme in ("proposed", "uniform_caching")

    lc = (LcState.initial(cfg.L, F, cfg.B_C, cfg.lc_sigma0)
          if scheme == "proposed" else None)
    q_fixed = (uniform_cache_vector(cfg.L, F, cfg.B_C)
               if scheme == "uniform_caching" else None)

    log_S = np.zeros(horizon_slots, dtype=int)
    log_power = np.zeros(horizon_slots)
    log_iters = np.zeros(horizon_slots, dtype=int)
    log_conv = np.zeros(horizon_slots, dtype=int)
    log_margin = np.zeros(horizon_slots)
    log_stalls = np.zeros(horizon_slots, dtype=int)
    log_backhaul = np.zeros(horizon_slots)

    lc_rows = []
    kkt_grad, kkt_slack, dual_conv, dual_evals = [], [], [], []
    interruptions_total = 0

    n_intervals = -(-horizon_slots // cfg.urp_hold)
    for i in range(n_intervals):
        t0 = i * cfg.urp_hold
        t1 = min(t0 + cfg.urp_hold, horizon_slots) - 1
        complete = (t1 - t0 + 1) == cfg.urp_hold
        urp = draw_urp(cfg.rho, cfg.K,
                       _stream_rng(cfg.rng_seed, _URP_STREAM, i),
                       interval_start=t0, interval_end=t1)
        rc = RateConstraint(mu=mu[urp.pi], B_W=cfg.B_W)
        mu_users = mu[urp.pi]

        if scheme == "proposed":
            q = lc.q
        elif scheme == "uniform_caching":
            q = q_fixed
        else:
            q = None

        slots = np.arange(t0, t1 + 1)
        if scheme == "conventional_comp":
            S = np.ones(slots.size, dtype=int)
        elif cached:
            sched = generate_cache_schedule(
                q, urp.pi, cfg.T_S,
                _stream_rng(cfg.rng_seed, _SCHED_STREAM, i))
            S = np.array([sched.indicator(int(t)) for t in slots], dtype=int)
        else:
            S = np.zeros(slots.size, dtype=int)

        where = f"interval {i}, slots {t0}..{t1}"
        states = [draw_channel(topo, cfg, int(t)) for t in slots]
        # coordinated solve on every slot: operated on S=0 slots, warm-start
        # source for the composite solve on S=1 slots
        coord = _solve_batch(states, rc, "coordinated", None, params, where)
        comp_idx = np.flatnonzero(S == 1)
        comp = []
        if comp_idx.size:
            comp = _solve_batch(
                [states[j] for j in comp_idx], rc, "comp",
                [comp_initial_point(coord[j].V, cfg.N_R) for j in comp_idx],
                params, where)
        comp_by_slot = dict(zip(comp_idx.tolist(), comp))

        players = [PlaybackState.fresh(mu_users[k], cfg.tau, cfg.T_S)
                   for k in range(cfg.K)]

        for j, t in enumerate(slots):
            t = int(t)
            st = comp_by_slot[j] if S[j] else coord[j]
            p = sum_power(st.V)
            log_S[t] = S[j]
            log_power[t] = p
            log_iters[t] = st.iterations
            log_conv[t] = int(st.converged)
            log_margin[t] = float(np.min(st.rates - mu_users))
            kkt_grad.append(st.kkt_grad_residual)
            kkt_slack.append(st.kkt_slack_residual)
            dual_conv.append(st.dual_converged)
            dual_evals.append(st.dual_evals)

            # refresh parity bits once per cache-update period; the initial
            # fill predates the measured window, so charges land at period
            # ends and the long-run rate matches K sum(q F) / T_C
            if cached and (t + 1) % refresh_period == 0:
                account_cache_update(meter, q.q, F)
            account_backhaul(meter, int(S[j]), account_as)
            log_backhaul[t] = meter.online_bits + meter.cache_update_bits

            ok = st.rates >= mu_users * (1.0 - params.eps_rate)
            for k in range(cfg.K):
                delivered = mu_users[k] * cfg.tau if ok[k] else 0.0
                players[k] = step_playback(players[k], delivered,
                                           mu_users[k], cfg.tau)
            log_stalls[t] = interruptions_total + sum(
                pl.interruptions for pl in players)

            if lc is not None:
                lc.add_sample(bool(S[j]), p)

        interruptions_total += sum(pl.interruptions for pl in players)

        if lc is not None and complete:
            P_s, Pt_s = lc.samples()
            if not Pt_s:
                # the schedule produced no composite slot; measure that mode
                # once on the interval's last channel (not operated: excluded
                # from power, backhaul, and playback accounting)
                extra = _solve_batch(
                    [states[-1]], rc, "comp",
                    [comp_initial_point(coord[-1].V, cfg.N_R)], params, where)
                Pt_s = [sum_power(extra[0].V)]
            if not P_s:
                P_s = [sum_power(coord[-1].V)]
            g = noisy_subgradient(lc.q, urp.pi, P_s, Pt_s)
            q_min, k_star = q_min_of(lc.q, urp.pi)
            lc_rows.append({
                "interval": lc.interval_index,
                "sigma": lc.step_rule(lc.interval_index),
                "q": tuple(lc.q.q.tolist()),
                "q_min": q_min,
                "moved_file": int(urp.pi[k_star]),
                "subgradient": float(g[int(urp.pi[k_star])]),
                "P_mean": float(P_s[0]),
                "P_tilde_mean": float(Pt_s[0]),
                "interval_avg_power": float(log_power[t0:t1 + 1].mean()),
            })
            lc = lc_update(lc, g)

    avg_p = float(log_power.mean())
    stats = {
        "n_slots": horizon_slots,
        "mean_iterations": float(log_iters.mean()),
        "max_iterations": int(log_iters.max()),
        "converged_fraction": float(log_conv.mean()),
        "dual_converged_fraction": float(np.mean(dual_conv)),
        "mean_dual_evals": float(np.mean(dual_evals)),
        "max_kkt_grad": float(np.max(kkt_grad)),
        "max_kkt_slack": float(np.max(kkt_slack)),
    }
    slot_log = {
        "slot": np.arange(horizon_slots),
        "S": log_S,
        "sum_power_w": log_power,
        "sp_iterations": log_iters,
        "sp_converged": log_conv,
        "min_rate_margin_bps": log_margin,
        "stalls_total": log_stalls,
        "backhaul_bits_total": log_backhaul,
    }
    return ExperimentResult(
        scheme=scheme,
        seed=cfg.rng_seed,
        horizon_slots=horizon_slots,
        avg_sum_power_w=avg_p,
        avg_sum_power_db=10.0 * math.log10(avg_p),
        avg_backhaul_bps=meter.average_rate,
        interruption_count=int(interruptions_total),
        lc_trace=tuple(lc_rows),
        sp_convergence_stats=stats,
        config=config_snapshot(cfg),
        slot_log=slot_log,
    )


def run_mixed_timescale(cfg: SystemConfig,
                        horizon_slots: int) -> ExperimentResult:
    """Cache-assisted run: controller-driven q, schedule-selected mode.

    The controller sees only realized powers and cached fractions, never the
    popularity vector rho; rho is consumed solely by the request process.
    """
    return _run_experiment(cfg, horizon_slots, "proposed")


def run_baseline(cfg: SystemConfig, baseline: str,
                 horizon_slots: int) -> ExperimentResult:
    """Reference schemes under the same keyed randomness as the proposed run.

    coordinated: no caches, per-cell precoding every slot.  conventional_comp:
    joint transmission every slot with full payload backhaul.  uniform_caching:
    capacity split evenly across files, no controller, otherwise identical to
    the proposed run.
    """
    if baseline not in BASELINES:
        raise ConfigurationError(f"unknown baseline '{baseline}'")
    return _run_experiment(cfg, horizon_slots, baseline)
