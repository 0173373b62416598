"""Rate-constrained power-minimization solver.

Proof groups:
 1. receivers and MSE: the MMSE receiver beats random perturbations, the
    MSE matrix matches its two defining forms, W = E^{-1} at the optimum
 2. rates: log-det formula against closed forms (single-user SVD channels),
    and the pointwise identity rate = ln det W at the MMSE point
 3. power bookkeeping (total and per BS, both modes)
 4. feasible start: exact rate hit, disjoint structure, error paths
 5. weighted-MSE gradient against central finite differences
 6. dual: subgradient against finite differences of the dual value,
    concavity, inner-minimizer stationarity, scalar golden-section oracle,
    weak duality, method cross-validation
 7. full solver: monotone descent, exit feasibility, KKT residuals, the
    achieved-rate == surrogate-rate identity, iteration bookkeeping
 8. comp embedding: exact rate/power preservation, warm-start dominance
 9. stream projection: rate preservation, power contraction, rank bound
10. validation errors and parameter defaults pinned to their contract values
"""

import math

import numpy as np
import numpy.testing as npt
import pytest

from cachedmimo.channel import ChannelState
from cachedmimo.errors import ConfigurationError, InfeasibleChannelError
from cachedmimo import precoder as pc

LN2 = math.log(2.0)


def rand_channel(rng, M=2, K=2, N_R=2, N_T=2) -> ChannelState:
    H = (rng.standard_normal((M, K, K, N_R, N_T))
         + 1j * rng.standard_normal((M, K, K, N_R, N_T))) / np.sqrt(2.0)
    return ChannelState(H=H, slot_index=0)


def rand_precoders(rng, H, mode="coordinated", scale=1.0) -> pc.PrecoderSet:
    n_tx = H.N_T if mode == "coordinated" else H.K * H.N_T
    d = min(n_tx, H.N_R)
    V = scale * (rng.standard_normal((H.M, H.K, n_tx, d))
                 + 1j * rng.standard_normal((H.M, H.K, n_tx, d)))
    return pc.PrecoderSet(mode=mode, V=V)


def feasible_by_scaling(rng, H, rc, mode="coordinated"):
    """Single-stream random precoders scaled until every rate clears mu.

    Full-rank transmission saturates under mutual interference (signal and
    interference grow together), but one stream per user leaves the MMSE
    receiver a free dimension, so scaling always reaches the targets.
    """
    V = rand_precoders(rng, H, mode).V
    V[..., 1:] = 0.0
    for _ in range(200):
        cand = pc.PrecoderSet(mode, V)
        if np.all(pc.user_rates(H, cand, rc.B_W) >= rc.mu):
            return cand
        V = V * 1.3
    raise AssertionError("could not scale to feasibility")


# -- 1. receivers and MSE ---------------------------------------------------

def test_mmse_receiver_minimizes_mse_trace():
    rng = np.random.default_rng(0)
    H = rand_channel(rng)
    V = rand_precoders(rng, H)
    for m in range(H.M):
        for k in range(H.K):
            U = pc.mmse_receiver(H, V, m, k)
            base = np.trace(pc.mse_matrix(H, V, U, m, k)).real
            for _ in range(8):
                dU = 1e-3 * (rng.standard_normal(U.shape)
                             + 1j * rng.standard_normal(U.shape))
                pert = np.trace(pc.mse_matrix(H, V, U + dU, m, k)).real
                assert pert >= base - 1e-12


def test_mse_matrix_two_forms_agree():
    # E = (I - U^H H V)(...)^H + U^H Omega U must equal
    # I - U^H H V - (U^H H V)^H + U^H (Omega + HVV^H H^H) U at any U
    rng = np.random.default_rng(1)
    H = rand_channel(rng, M=1, K=3)
    V = rand_precoders(rng, H)
    for k in range(3):
        U = 0.3 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        E = pc.mse_matrix(H, V, U, 0, k)
        cov = np.eye(2, dtype=complex)
        for n in range(3):
            T = H.H[0, k, n] @ V.V[0, n]
            cov += T @ T.conj().T
        D = U.conj().T @ H.H[0, k, k] @ V.V[0, k]
        E2 = np.eye(2) - D - D.conj().T + U.conj().T @ cov @ U
        npt.assert_allclose(E, E2, atol=1e-12)


def test_weight_is_inverse_mse_at_mmse_receiver():
    rng = np.random.default_rng(2)
    H = rand_channel(rng)
    V = rand_precoders(rng, H)
    prob = pc._BatchProblem.from_states([H], "coordinated")
    U, W, _, _ = prob.mmse_step(V.V[None])
    for m in range(H.M):
        for k in range(H.K):
            E = pc.mse_matrix(H, V, U[0, m, k], m, k)
            npt.assert_allclose(W[0, m, k] @ E, np.eye(2), atol=1e-10)


# -- 2. rates ---------------------------------------------------------------

def test_single_user_rate_closed_form():
    # no interference: R = (B_W / (M ln 2)) * sum_m sum_i ln(1 + p_i s_i^2)
    rng = np.random.default_rng(3)
    M, NR, NT = 3, 2, 2
    H = (rng.standard_normal((M, 1, 1, NR, NT))
         + 1j * rng.standard_normal((M, 1, 1, NR, NT))) / np.sqrt(2)
    st = ChannelState(H=H, slot_index=0)
    powers = np.array([1.7, 0.4])
    V = np.zeros((M, 1, NT, 2), dtype=complex)
    expect_nats = 0.0
    for m in range(M):
        _, s, vh = np.linalg.svd(H[m, 0, 0])
        V[m, 0] = vh.conj().T @ np.diag(np.sqrt(powers))
        expect_nats += np.log1p(powers * s[:2] ** 2).sum()
    rate = pc.user_rates(st, pc.PrecoderSet("coordinated", V), B_W=2e6)
    npt.assert_allclose(rate[0], 2e6 / (M * LN2) * expect_nats, rtol=1e-10)


def test_rate_equals_logdet_weight_at_mmse_point():
    rng = np.random.default_rng(4)
    H = rand_channel(rng, M=2, K=3)
    V = rand_precoders(rng, H)
    prob = pc._BatchProblem.from_states([H], "coordinated")
    _, W, rate_nats, logdetW = prob.mmse_step(V.V[None])
    npt.assert_allclose(rate_nats, logdetW, rtol=1e-9, atol=1e-11)


def test_rates_scale_invariance_zero_precoder():
    rng = np.random.default_rng(5)
    H = rand_channel(rng)
    V = pc.PrecoderSet("coordinated", np.zeros((2, 2, 2, 2), dtype=complex))
    npt.assert_array_equal(pc.user_rates(H, V, 1e6), 0.0)


# -- 3. power ---------------------------------------------------------------

def test_sum_power_direct():
    rng = np.random.default_rng(6)
    H = rand_channel(rng)
    V = rand_precoders(rng, H)
    npt.assert_allclose(pc.sum_power(V), np.sum(np.abs(V.V) ** 2), rtol=1e-12)
    npt.assert_allclose(pc.bs_powers(V).sum(), pc.sum_power(V), rtol=1e-12)


def test_bs_powers_comp_block_mapping():
    rng = np.random.default_rng(7)
    K, NT = 3, 2
    V = np.zeros((1, K, K * NT, 2), dtype=complex)
    # only BS 1's antenna rows carry energy
    V[:, :, NT:2 * NT, :] = 1.0 + 1j
    p = pc.bs_powers(pc.PrecoderSet("comp", V))
    assert p[1] > 0 and p[0] == 0 and p[2] == 0
    npt.assert_allclose(p[1], np.sum(np.abs(V) ** 2), rtol=1e-12)


# -- 4. feasible start ------------------------------------------------------

def test_feasible_init_hits_targets_exactly():
    rng = np.random.default_rng(8)
    H = rand_channel(rng, M=3, K=3)
    rc = pc.RateConstraint(mu=np.array([1.5e6, 0.7e6, 2.2e6]), B_W=1e6)
    V0 = pc.feasible_init(H, rc)
    rates = pc.user_rates(H, V0, rc.B_W)
    npt.assert_allclose(rates, rc.mu, rtol=1e-9)


def test_feasible_init_disjoint_structure():
    rng = np.random.default_rng(9)
    H = rand_channel(rng, M=4, K=3)
    rc = pc.RateConstraint.from_nats(np.array([0.3, 0.6, 0.9]))
    V0 = pc.feasible_init(H, rc)
    for m in range(4):
        for k in range(3):
            block = V0.V[m, k]
            if m == k:
                assert np.abs(block).max() > 0
            else:
                assert np.all(block == 0)


def test_feasible_init_power_closed_form():
    rng = np.random.default_rng(10)
    H = rand_channel(rng, M=2, K=2)
    mu_bar = np.array([0.8, 0.0])
    rc = pc.RateConstraint.from_nats(mu_bar)
    V0 = pc.feasible_init(H, rc)
    s1 = np.linalg.svd(H.H[0, 0, 0], compute_uv=False)[0]
    npt.assert_allclose(np.sum(np.abs(V0.V[0, 0]) ** 2),
                        math.expm1(2 * 0.8) / s1 ** 2, rtol=1e-12)
    assert np.all(V0.V[:, 1] == 0)      # zero-target user stays silent


def test_feasible_init_requires_enough_subcarriers():
    rng = np.random.default_rng(11)
    H = rand_channel(rng, M=1, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.5, 0.5]))
    with pytest.raises(ConfigurationError):
        pc.feasible_init(H, rc)


def test_dead_direct_link_rejected():
    rng = np.random.default_rng(12)
    H = rand_channel(rng, M=2, K=2).H.copy()
    H[:, 0, 0] = 0
    rc = pc.RateConstraint.from_nats(np.array([0.5, 0.5]))
    with pytest.raises(InfeasibleChannelError):
        pc.algorithm_sp(ChannelState(H=H, slot_index=3), rc)


# -- 5. weighted-MSE gradient -----------------------------------------------

@pytest.mark.parametrize("mode", ["coordinated", "comp"])
def test_weighted_mse_gradient_finite_difference(mode):
    rng = np.random.default_rng(13)
    H = rand_channel(rng, M=2, K=2)
    V = rand_precoders(rng, H, mode)
    prob = pc._BatchProblem.from_states([H], mode)
    U, W, _, _ = prob.mmse_step(V.V[None])

    def total(Varr):
        work = prob.dual_precompute(U, W)
        return float(prob.weighted_mse(work, U, W, Varr[None]).sum())

    G = pc.weighted_mse_gradient(H, V, U[0], W[0])
    h = 1e-6
    for _ in range(12):
        m = rng.integers(H.M); k = rng.integers(H.K)
        a = rng.integers(V.V.shape[2]); b = rng.integers(V.V.shape[3])
        for delta, part in ((h, "re"), (1j * h, "im")):
            Vp = V.V.copy(); Vp[m, k, a, b] += delta
            Vm = V.V.copy(); Vm[m, k, a, b] -= delta
            fd = (total(Vp) - total(Vm)) / (2 * h)
            # d/dx f = 2 Re dF/dconj(V), d/dy f = 2 Im dF/dconj(V)
            an = 2 * (G[m, k, a, b].real if part == "re" else G[m, k, a, b].imag)
            npt.assert_allclose(fd, an, rtol=1e-5, atol=1e-7)


# -- 6. dual ----------------------------------------------------------------

def _uw_for(H, V, mode="coordinated"):
    prob = pc._BatchProblem.from_states([H], mode)
    U, W, _, _ = prob.mmse_step(V.V[None])
    return U[0], W[0]


def test_dual_subgradient_is_fd_gradient():
    rng = np.random.default_rng(14)
    H = rand_channel(rng, M=1, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.6, 0.4]))
    V = feasible_by_scaling(rng, H, rc)
    U, W = _uw_for(H, V)
    lam = np.array([0.9, 1.7])
    g = pc.dual_subgradient(lam, H, U, W, rc)
    h = 1e-5
    for k in range(2):
        lp = lam.copy(); lp[k] += h
        lm = lam.copy(); lm[k] -= h
        fd = (pc.dual_value(lp, H, U, W, rc) - pc.dual_value(lm, H, U, W, rc)) / (2 * h)
        npt.assert_allclose(fd, g[k], rtol=1e-5, atol=1e-8)


def test_dual_concavity_subgradient_inequality():
    rng = np.random.default_rng(15)
    H = rand_channel(rng, M=1, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.7, 0.5]))
    V = feasible_by_scaling(rng, H, rc)
    U, W = _uw_for(H, V)
    for _ in range(40):
        a = rng.uniform(0.05, 8.0, size=2)
        b = rng.uniform(0.05, 8.0, size=2)
        Ja = pc.dual_value(a, H, U, W, rc)
        Jb = pc.dual_value(b, H, U, W, rc)
        ga = pc.dual_subgradient(a, H, U, W, rc)
        assert Jb <= Ja + ga @ (b - a) + 1e-9 * max(1, abs(Ja))


def test_inner_precoders_are_stationary():
    # V*(lam) minimizes the Lagrangian: random directional derivatives vanish
    rng = np.random.default_rng(16)
    H = rand_channel(rng, M=2, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.5, 0.8]))
    Vf = feasible_by_scaling(rng, H, rc)
    U, W = _uw_for(H, Vf)
    lam = np.array([1.3, 0.6])
    Vstar = pc.dual_inner_precoders(lam, U, W, H)
    L0 = pc.lagrangian_value(lam, H, U, W, rc, Vstar)
    h = 1e-6
    scale = np.abs(Vstar.V).max()
    for _ in range(10):
        D = (rng.standard_normal(Vstar.V.shape)
             + 1j * rng.standard_normal(Vstar.V.shape))
        D *= scale / np.abs(D).max()
        Lp = pc.lagrangian_value(lam, H, U, W, rc,
                                 pc.PrecoderSet("coordinated", Vstar.V + h * D))
        Lm = pc.lagrangian_value(lam, H, U, W, rc,
                                 pc.PrecoderSet("coordinated", Vstar.V - h * D))
        deriv = (Lp - Lm) / (2 * h)
        assert abs(deriv) <= 1e-4 * max(1.0, abs(L0) / scale)
        assert Lp >= L0 - 1e-10 and Lm >= L0 - 1e-10     # local minimum


def test_solve_dual_scalar_golden_section_oracle():
    # K=1: maximize J(lam) by golden-section search, compare to solve_dual
    rng = np.random.default_rng(17)
    H = rand_channel(rng, M=1, K=1)
    rc = pc.RateConstraint.from_nats(np.array([0.9]))
    V = feasible_by_scaling(rng, H, rc)
    U, W = _uw_for(H, V)

    def J(x):
        return pc.dual_value(np.array([x]), H, U, W, rc)

    lo, hi = 0.0, 1.0
    while J(hi * 2) > J(hi):
        hi *= 2
    hi *= 2
    phi = (math.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    for _ in range(200):
        if J(c) < J(d):
            a, c = c, d
            d = a + phi * (b - a)
        else:
            b, d = d, c
            c = b - phi * (b - a)
    lam_gold = 0.5 * (a + b)

    sol = pc.solve_dual(U, W, H, rc)
    assert sol.converged
    npt.assert_allclose(sol.lam[0], lam_gold, rtol=1e-6)
    npt.assert_allclose(sol.value, J(lam_gold), rtol=1e-9)


def test_weak_duality():
    # J(lam*) <= P(V_feas) for any V feasible in the surrogate constraints.
    # A scaled disjoint start is strictly feasible at its own MMSE (U, W):
    # there Tr(W E) = d, so each residual is mu_bar - rate < 0.
    rng = np.random.default_rng(18)
    H = rand_channel(rng, M=2, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.5, 0.6]))
    Vf = pc.PrecoderSet("coordinated", 1.2 * pc.feasible_init(H, rc).V)
    U, W = _uw_for(H, Vf)
    # residual of constraint k at Vf = L(e_k; Vf) - L(0; Vf); both negative
    L0 = pc.lagrangian_value(np.zeros(2), H, U, W, rc, Vf)
    for k in range(2):
        e = np.zeros(2); e[k] = 1.0
        assert pc.lagrangian_value(e, H, U, W, rc, Vf) - L0 < 0
    sol = pc.solve_dual(U, W, H, rc)
    assert sol.converged
    assert sol.value <= pc.sum_power(Vf) + 1e-9 * pc.sum_power(Vf)


def test_dual_methods_agree():
    rng = np.random.default_rng(19)
    H = rand_channel(rng, M=2, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.8, 0.6]))
    V = feasible_by_scaling(rng, H, rc)
    U, W = _uw_for(H, V)
    a = pc.solve_dual(U, W, H, rc, params=pc.SolverParams(dual_method="coordinate"))
    s = pc.solve_dual(U, W, H, rc, params=pc.SolverParams(dual_method="subgradient",
                                                          max_dual_evals=5000))
    npt.assert_allclose(a.value, s.value, rtol=1e-6)
    npt.assert_allclose(a.lam, s.lam, rtol=1e-3)
    assert a.slack_residual <= 1e-6


def test_multiplier_scale_invariance_under_channel_scaling():
    # scaling H by c scales the feasible powers by 1/c^2; multipliers track
    # the power scale, and the solver still converges cleanly
    rng = np.random.default_rng(20)
    base = rand_channel(rng, M=2, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.7, 0.7]))
    st1 = pc.algorithm_sp(base, rc)
    c = 1e-3
    st2 = pc.algorithm_sp(ChannelState(H=base.H * c, slot_index=0), rc)
    assert st1.converged and st2.converged
    npt.assert_allclose(pc.sum_power(st2.V) * c ** 2, pc.sum_power(st1.V),
                        rtol=1e-5)


# -- 7. full solver ---------------------------------------------------------

def test_sp_descent_feasibility_many_seeds():
    rng = np.random.default_rng(21)
    states, rcs = [], []
    for _ in range(25):
        states.append(rand_channel(rng, M=3, K=3))
        rcs.append(pc.RateConstraint.from_nats(rng.uniform(0.1, 1.0, size=3)))
    out = pc.algorithm_sp_batch(states, rcs)
    for st, rc in zip(out, rcs):
        tr = st.objective_trace
        assert np.all(np.diff(tr) <= 1e-8 * np.maximum(tr[:-1], 1e-30))
        assert st.converged
        assert np.all(st.rates >= rc.mu * (1 - 1e-3))
        assert st.kkt_grad_residual < 1e-4
        assert np.all(np.abs(st.rates - st.surrogate_rates)
                      <= 1e-8 * np.maximum(st.rates, 1.0))


def test_sp_coupled_interference_instance():
    rng = np.random.default_rng(22)
    H = rand_channel(rng, M=1, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.8, 0.5]))
    init = feasible_by_scaling(rng, H, rc)
    st = pc.algorithm_sp(H, rc, init=init)
    assert st.converged and st.dual_converged
    assert st.kkt_grad_residual < 1e-4
    assert st.kkt_slack_residual < 1e-4
    assert np.all(st.rates >= rc.mu * (1 - 1e-3))
    assert pc.sum_power(st.V) <= pc.sum_power(init) + 1e-12


def test_sp_disjoint_start_is_fixed_point():
    # with one user per subcarrier the feasible start already satisfies the
    # stationarity conditions; the solver recognizes it immediately
    rng = np.random.default_rng(23)
    H = rand_channel(rng, M=2, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.6, 0.9]))
    V0 = pc.feasible_init(H, rc)
    st = pc.algorithm_sp(H, rc)
    assert st.iterations <= 2
    npt.assert_allclose(pc.sum_power(st.V), pc.sum_power(V0), rtol=1e-6)


def test_sp_comp_mode_requires_init():
    rng = np.random.default_rng(24)
    H = rand_channel(rng)
    rc = pc.RateConstraint.from_nats(np.array([0.5, 0.5]))
    with pytest.raises(ConfigurationError):
        pc.algorithm_sp(H, rc, mode="comp")


def test_sp_init_mode_mismatch_rejected():
    rng = np.random.default_rng(25)
    H = rand_channel(rng)
    rc = pc.RateConstraint.from_nats(np.array([0.5, 0.5]))
    V0 = pc.feasible_init(H, rc)
    with pytest.raises(ConfigurationError):
        pc.algorithm_sp(H, rc, mode="comp", init=V0)


def test_sp_batch_matches_single_solves():
    rng = np.random.default_rng(26)
    states = [rand_channel(rng, M=2, K=2) for _ in range(5)]
    rc = pc.RateConstraint.from_nats(np.array([0.6, 0.8]))
    batch = pc.algorithm_sp_batch(states, rc)
    for st, H in zip(batch, states):
        single = pc.algorithm_sp(H, rc)
        npt.assert_allclose(pc.sum_power(st.V), pc.sum_power(single.V), rtol=1e-12)
        npt.assert_array_equal(st.objective_trace, single.objective_trace)


def test_sp_trace_kkt_recording():
    rng = np.random.default_rng(27)
    H = rand_channel(rng, M=1, K=2)
    rc = pc.RateConstraint.from_nats(np.array([0.8, 0.5]))
    init = feasible_by_scaling(rng, H, rc)
    st = pc.algorithm_sp(H, rc, init=init, trace_kkt=True)
    assert st.kkt_trace is not None
    assert st.kkt_trace.ndim == 1 and len(st.kkt_trace) >= st.iterations
    assert st.kkt_trace[st.iterations - 1] <= 1e-4


# -- 8. comp embedding ------------------------------------------------------

def test_comp_initial_point_preserves_rates_and_power():
    rng = np.random.default_rng(28)
    H = rand_channel(rng, M=3, K=3, N_R=2, N_T=2)
    rc = pc.RateConstraint.from_nats(np.array([0.4, 0.7, 0.5]))
    st = pc.algorithm_sp(H, rc)
    Vc = pc.comp_initial_point(st.V, H.N_R)
    assert Vc.mode == "comp" and Vc.V.shape == (3, 3, 6, 2)
    npt.assert_allclose(pc.sum_power(Vc), pc.sum_power(st.V), rtol=1e-14)
    npt.assert_allclose(pc.user_rates(H, Vc, rc.B_W),
                        pc.user_rates(H, st.V, rc.B_W), rtol=1e-10)


def test_comp_embedding_row_layout():
    V = np.arange(1 * 2 * 2 * 1, dtype=complex).reshape(1, 2, 2, 1) + 1.0
    Vc = pc.comp_initial_point(pc.PrecoderSet("coordinated", V), N_R=2)
    npt.assert_array_equal(Vc.V[0, 0, 0:2, 0:1], V[0, 0])
    npt.assert_array_equal(Vc.V[0, 1, 2:4, 0:1], V[0, 1])
    assert np.all(Vc.V[0, 0, 2:4] == 0)
    assert np.all(Vc.V[0, 1, 0:2] == 0)


def test_warm_start_dominance():
    rng = np.random.default_rng(29)
    states = [rand_channel(rng, M=2, K=2) for _ in range(20)]
    rc = pc.RateConstraint.from_nats(np.array([0.6, 0.8]))
    coord = pc.algorithm_sp_batch(states, rc)
    inits = [pc.comp_initial_point(st.V, 2) for st in coord]
    comp = pc.algorithm_sp_batch(states, rc, mode="comp", inits=inits)
    for a, b in zip(comp, coord):
        assert pc.sum_power(a.V) <= pc.sum_power(b.V) * (1 + 1e-9)
        assert np.all(a.rates >= rc.mu * (1 - 1e-3))


# -- 9. stream projection ---------------------------------------------------

def test_project_streams_power_and_rate_behavior():
    # every block's power nonincreases, always; rates typically improve
    # (less total interference energy) but are not ordered instance by
    # instance, since a cross channel can see more energy after projection
    rng = np.random.default_rng(30)
    nondecreasing = 0
    for _ in range(100):
        H = rand_channel(rng, M=2, K=2, N_R=2, N_T=4)
        wide = (rng.standard_normal((2, 2, 4, 4))
                + 1j * rng.standard_normal((2, 2, 4, 4)))
        proj = pc.project_streams(wide, H)
        assert proj.V.shape == (2, 2, 4, 2)        # d = min(4, 2)
        pw_wide = np.sum(np.abs(wide) ** 2, axis=(2, 3))
        pw_proj = np.sum(np.abs(proj.V) ** 2, axis=(2, 3))
        assert np.all(pw_proj <= pw_wide * (1 + 1e-12))
        prob = pc._BatchProblem.from_states([H], "coordinated")
        nats_wide = prob.rate_nats(np.asarray(wide, complex)[None])[0]
        nats_proj = prob.rate_nats(proj.V[None])[0]
        if np.all(nats_proj >= nats_wide * (1 - 1e-9)):
            nondecreasing += 1
    assert nondecreasing >= 80


def test_project_streams_exact_rate_without_interference():
    # single user: the preserved signal covariance is the whole rate story
    rng = np.random.default_rng(35)
    H = rand_channel(rng, M=2, K=1, N_R=2, N_T=4)
    wide = rng.standard_normal((2, 1, 4, 5)) + 1j * rng.standard_normal((2, 1, 4, 5))
    proj = pc.project_streams(wide, H)
    prob = pc._BatchProblem.from_states([H], "coordinated")
    npt.assert_allclose(prob.rate_nats(proj.V[None]),
                        prob.rate_nats(np.asarray(wide, complex)[None]),
                        rtol=1e-10)
    assert pc.sum_power(proj) <= np.sum(np.abs(wide) ** 2) + 1e-9


def test_project_streams_keeps_own_signal():
    rng = np.random.default_rng(34)
    H = rand_channel(rng, M=1, K=2, N_R=2, N_T=4)
    wide = rng.standard_normal((1, 2, 4, 3)) + 1j * rng.standard_normal((1, 2, 4, 3))
    proj = pc.project_streams(wide, H)
    for k in range(2):
        S1 = H.H[0, k, k] @ wide[0, k] @ wide[0, k].conj().T @ H.H[0, k, k].conj().T
        S2 = H.H[0, k, k] @ proj.V[0, k] @ proj.V[0, k].conj().T @ H.H[0, k, k].conj().T
        npt.assert_allclose(S1, S2, atol=1e-9 * np.abs(S1).max())


def test_project_streams_identity_on_reduced_rank():
    rng = np.random.default_rng(31)
    H = rand_channel(rng, M=1, K=2, N_R=2, N_T=2)
    V = rand_precoders(rng, H)
    proj = pc.project_streams(V.V, H)
    # already d columns in the channel row space: covariance is unchanged
    for k in range(2):
        G1 = V.V[0, k] @ V.V[0, k].conj().T
        G2 = proj.V[0, k] @ proj.V[0, k].conj().T
        npt.assert_allclose(G1, G2, atol=1e-10)


def test_project_streams_column_energy_descending():
    rng = np.random.default_rng(32)
    H = rand_channel(rng, M=1, K=2, N_R=2, N_T=3)
    wide = rng.standard_normal((1, 2, 3, 5)) + 1j * rng.standard_normal((1, 2, 3, 5))
    proj = pc.project_streams(wide, H)
    for k in range(2):
        e = np.sum(np.abs(proj.V[0, k]) ** 2, axis=0)
        assert np.all(np.diff(e) <= 1e-12)


# -- 10. validation and defaults --------------------------------------------

def test_rate_constraint_roundtrip():
    rc = pc.RateConstraint(mu=np.array([2e6, 1e6]), B_W=1e6)
    npt.assert_allclose(rc.mu_bar, np.array([2.0, 1.0]) * LN2, rtol=1e-15)
    rc2 = pc.RateConstraint.from_nats(rc.mu_bar, B_W=1e6)
    npt.assert_allclose(rc2.mu, rc.mu, rtol=1e-15)


def test_rate_constraint_rejects_negative():
    with pytest.raises(ConfigurationError):
        pc.RateConstraint(mu=np.array([-1.0]), B_W=1e6)


def test_precoder_set_validation():
    with pytest.raises(ConfigurationError):
        pc.PrecoderSet("sideways", np.zeros((1, 1, 2, 2), dtype=complex))
    with pytest.raises(ConfigurationError):
        pc.PrecoderSet("coordinated", np.full((1, 1, 2, 2), np.nan + 0j))
    with pytest.raises(ConfigurationError):
        pc.PrecoderSet("coordinated", np.zeros((2, 2), dtype=complex))


def test_solver_params_contract_defaults():
    p = pc.SolverParams()
    assert p.eps_sp == 1e-5
    assert p.eps_dual == 1e-6
    assert p.eps_rate == 1e-3
    assert p.eps_kkt == 1e-4
    assert p.eps_num == 1e-8
    assert p.max_iter == 200
    assert p.max_dual_evals == 2000


def test_shape_mismatch_between_channel_and_precoder():
    rng = np.random.default_rng(33)
    H = rand_channel(rng, M=2, K=2)
    bad = pc.PrecoderSet("coordinated", np.zeros((1, 2, 2, 2), dtype=complex))
    with pytest.raises(ConfigurationError):
        pc.user_rates(H, bad, 1e6)
