"""Self-check suite behind the `validate` command.

Each check re-verifies one load-bearing property of the library on fresh
random instances: solver descent and feasibility, warm-start dominance of
the joint-transmission solve, projection optimality, objective convexity
along segments, dual concavity, schedule counting, and playback-buffer
conservation.  Checks are sized to finish in seconds; the test suite holds
the exhaustive versions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import generate_cache_schedule, project_cache, q_min_of
from .channel import ChannelState
from .precoder import (RateConstraint, algorithm_sp, algorithm_sp_batch,
                       comp_initial_point, dual_value, sum_power)
from .streaming import PlaybackState, step_playback


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _rand_channel(rng, M=3, K=3, N_R=2, N_T=2) -> ChannelState:
    H = (rng.standard_normal((M, K, K, N_R, N_T))
         + 1j * rng.standard_normal((M, K, K, N_R, N_T))) / np.sqrt(2.0)
    return ChannelState(H=H, slot_index=0)


def _rand_rc(rng, K=3) -> RateConstraint:
    return RateConstraint.from_nats(rng.uniform(0.1, 1.0, size=K), B_W=1e6)


def check_sp_descent(rng, n=8) -> CheckResult:
    """Objective trace nonincreasing, exit rates feasible, KKT residual."""
    worst_rise, worst_short, worst_kkt = 0.0, 0.0, 0.0
    for _ in range(n):
        H = _rand_channel(rng)
        rc = _rand_rc(rng)
        st = algorithm_sp(H, rc)
        tr = st.objective_trace
        rise = float(np.max(np.diff(tr) / np.maximum(tr[:-1], 1e-300)))
        worst_rise = max(worst_rise, rise)
        worst_short = max(worst_short,
                          float(np.max(1.0 - st.rates / rc.mu)))
        worst_kkt = max(worst_kkt, st.kkt_grad_residual,
                        st.kkt_slack_residual)
    ok = worst_rise <= 1e-8 and worst_short <= 1e-3 and worst_kkt < 1e-4
    return CheckResult(
        "sp_descent_feasibility", ok,
        f"max trace rise {worst_rise:.2e}, max rate shortfall "
        f"{worst_short:.2e}, max KKT residual {worst_kkt:.2e}")


def check_warmstart_dominance(rng, n=6) -> CheckResult:
    """Joint transmission never needs more power than per-cell precoding."""
    worst = -np.inf
    for _ in range(n):
        H = _rand_channel(rng)
        rc = _rand_rc(rng)
        coord = algorithm_sp(H, rc)
        comp = algorithm_sp_batch(
            [H], rc, mode="comp",
            inits=[comp_initial_point(coord.V, H.N_R)])[0]
        p, pt = sum_power(coord.V), sum_power(comp.V)
        worst = max(worst, (pt - p) / p)
    ok = worst <= 1e-8
    return CheckResult("warmstart_dominance", ok,
                       f"max relative excess {worst:.2e}")


def check_projection_optimality(rng, n=40) -> CheckResult:
    """project_cache output is feasible and at least as close to the raw
    point as random feasible competitors."""
    worst = 0.0
    for _ in range(n):
        L = int(rng.integers(2, 5))
        F = rng.uniform(0.5, 2.0, size=L)
        B_C = float(rng.uniform(0.2, 1.2) * F.sum() * 0.5)
        raw = rng.uniform(-0.5, 1.5, size=L)
        q = project_cache(raw, F, B_C).q
        if np.any(q < -1e-12) or np.any(q > 1 + 1e-12) or F @ q > B_C + 1e-8:
            return CheckResult("projection_optimality", False,
                               "projected point infeasible")
        d0 = float(np.sum((q - raw) ** 2))
        for _ in range(50):
            z = rng.uniform(0, 1, size=L)
            if F @ z > B_C:
                z = z * (B_C / (F @ z))
            worst = max(worst, d0 - float(np.sum((z - raw) ** 2)))
    ok = worst <= 1e-9
    return CheckResult("projection_optimality", ok,
                       f"max distance excess over competitors {worst:.2e}")


def check_objective_convexity(rng, n=60) -> CheckResult:
    """(1 - q_min) a + q_min b is convex in q along segments per profile."""
    worst = 0.0
    for _ in range(n):
        L, K = 4, 3
        pi = rng.integers(0, L, size=K)
        a, b = 10.0 + rng.uniform(0, 2), 4.0 + rng.uniform(0, 2)

        def psi(q):
            m = q_min_of(q, pi)[0]
            return (1.0 - m) * a + m * b

        q1, q2 = rng.uniform(0, 1, size=L), rng.uniform(0, 1, size=L)
        for t in (0.25, 0.5, 0.75):
            mid = psi(t * q1 + (1 - t) * q2)
            chord = t * psi(q1) + (1 - t) * psi(q2)
            worst = max(worst, mid - chord)
    ok = worst <= 1e-12
    return CheckResult("objective_convexity", ok,
                       f"max convexity violation {worst:.2e}")


def check_dual_concavity(rng, n=4) -> CheckResult:
    """The dual function is concave along random segments."""
    from .precoder import mmse_receiver, mse_matrix

    worst = 0.0
    for _ in range(n):
        H = _rand_channel(rng, M=2, K=2)
        rc = _rand_rc(rng, K=2)
        V0 = algorithm_sp(H, rc).V
        U = np.stack([[mmse_receiver(H, V0, m, k) for k in range(2)]
                      for m in range(2)])
        W = np.stack([[np.linalg.inv(mse_matrix(H, V0, U[m, k], m, k))
                       for k in range(2)] for m in range(2)])
        W = 0.5 * (W + np.conj(np.swapaxes(W, -1, -2)))
        lam1 = rng.uniform(0, 3, size=2)
        lam2 = rng.uniform(0, 3, size=2)
        j1 = dual_value(lam1, H, U, W, rc)
        j2 = dual_value(lam2, H, U, W, rc)
        for t in (0.3, 0.7):
            jm = dual_value(t * lam1 + (1 - t) * lam2, H, U, W, rc)
            scale = max(abs(j1), abs(j2), 1.0)
            worst = max(worst, (t * j1 + (1 - t) * j2 - jm) / scale)
    ok = worst <= 1e-9
    return CheckResult("dual_concavity", ok,
                       f"max relative chord excess {worst:.2e}")


def check_schedule_counts(rng, n=20) -> CheckResult:
    """Every sliding frame-length window holds exactly the scheduled count."""
    for _ in range(n):
        T_S = int(rng.integers(4, 13))
        L = int(rng.integers(1, 4))
        q = rng.uniform(0, 1, size=L)
        pi = rng.integers(0, L, size=3)
        s = generate_cache_schedule(q, pi, T_S, rng)
        S = s.indicator(np.arange(100 * T_S))
        w = np.convolve(S, np.ones(T_S, dtype=int), mode="valid")
        if not np.all(w == s.n_comp):
            return CheckResult("schedule_counts", False,
                               f"window count mismatch at T_S={T_S}")
    return CheckResult("schedule_counts", True,
                       f"{n} schedules, all sliding windows exact")


def check_playback_conservation(rng, n=10) -> CheckResult:
    """Delivered bits are never lost: the buffer holds prebuffer plus input
    minus the slots actually played, and reassembly accounts every bit."""
    for _ in range(n):
        mu, tau, T_S = 2e6, 5e-3, 8
        st = PlaybackState.fresh(mu, tau, T_S)
        pre = st.buffer_bits
        delivered = 0.0
        steps = 200
        for _ in range(steps):
            d = float(rng.uniform(0, 2) * mu * tau)
            delivered += d
            st = step_playback(st, d, mu, tau)
        played = (steps - st.interruptions) * mu * tau
        buf_err = abs(st.buffer_bits - (pre + delivered - played))
        asm_err = abs(st.decoded_bits + st.segment_progress_bits - delivered)
        if max(buf_err, asm_err) > 1e-6 * (pre + delivered):
            return CheckResult("playback_conservation", False,
                               f"buffer error {buf_err:.2e}, "
                               f"reassembly error {asm_err:.2e}")
    return CheckResult("playback_conservation", True,
                       f"{n} random delivery traces conserved")


ALL_CHECKS = (check_sp_descent, check_warmstart_dominance,
              check_projection_optimality, check_objective_convexity,
              check_dual_concavity, check_schedule_counts,
              check_playback_conservation)


def run_validation(seed: int = 0) -> list:
    """Run every check on its own seeded generator; returns CheckResults."""
    results = []
    for i, check in enumerate(ALL_CHECKS):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(0xDA, i)))
        results.append(check(rng))
    return results
