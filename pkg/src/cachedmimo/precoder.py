"""Minimum-power multicell MIMO precoding under per-user rate constraints.

The problem: on every subcarrier m each of K BSs sends d streams to its user
(coordinated mode), or all K BSs jointly precode every user's streams as one
large array (comp mode).  Minimize total transmit power subject to per-user
average-rate constraints R_k >= mu_k.

The solver alternates three block updates until the power settles:

  Step 1   U[m,k] <- MMSE receiver for the current precoders,
  Step 2   W[m,k] <- (I - U^H H V)^{-1}, the optimal MSE weight,
  Step 3   V      <- closed-form minimizer of the weighted-MSE-constrained
                     power problem, with multipliers lambda found by
                     maximizing the concave dual.

With W fixed at the inverse MSE matrix, the weighted-MSE constraint set
contains the rate-constraint set tightly enough that every iterate stays
rate-feasible and the power sequence is nonincreasing; at a fixed point the
iterate satisfies the KKT conditions of the original rate-constrained
problem and the achieved rate equals the weighted-MSE surrogate rate.

All inner kernels run over a leading batch axis (independent instances or
slots) so that Monte-Carlo sweeps amortize numpy dispatch overhead; the
public single-instance operations wrap a batch of one.

Unit conventions: rates in bits/s, rate targets internally in nats per
subcarrier use (mu_bar = mu * ln2 / B_W), powers in linear units relative to
unit-variance receiver noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, FEASIBLE_TRACE_TOL
from .errors import ConfigurationError, InfeasibleChannelError

LN2 = math.log(2.0)

# stopping / tolerance defaults; the knobs live in SolverParams
EPS_SP = 1e-5        # relative sum-power change at which SP stops
EPS_DUAL = 1e-6      # complementary-slackness residual (normalized)
EPS_RATE = 1e-3      # relative rate-feasibility slack at exit
EPS_KKT = 1e-4       # normalized KKT residual at exit
EPS_NUM = 1e-8       # relative descent tolerance (monotonicity checks)
MAX_SP_ITER = 200
MAX_DUAL_EVALS = 2000


def conjT(x):
    """Hermitian transpose of the trailing two axes."""
    return np.swapaxes(x.conj(), -1, -2)


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateConstraint:
    """Per-user rate targets. mu in bits/s, length K."""

    mu: np.ndarray
    B_W: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        if np.any(self.mu < 0):
            raise ConfigurationError("rate targets must be >= 0")
        if self.B_W <= 0:
            raise ConfigurationError("B_W must be positive")

    @property
    def mu_bar(self) -> np.ndarray:
        """Targets in nats per subcarrier use."""
        return self.mu * LN2 / self.B_W

    @classmethod
    def from_nats(cls, mu_bar, B_W: float = 1.0) -> "RateConstraint":
        mu_bar = np.asarray(mu_bar, dtype=float)
        return cls(mu=mu_bar * B_W / LN2, B_W=B_W)


@dataclass(frozen=True)
class PrecoderSet:
    """Per-subcarrier, per-user precoders.

    V has shape (M, K, n_tx, d): n_tx = N_T and d = min(N_T, N_R) in
    coordinated mode; n_tx = K*N_T and d = min(K*N_T, N_R) in comp mode.
    """

    mode: str                 # "coordinated" | "comp"
    V: np.ndarray

    def __post_init__(self):
        if self.mode not in ("coordinated", "comp"):
            raise ConfigurationError(f"unknown precoder mode {self.mode!r}")
        V = np.asarray(self.V, dtype=complex)
        if V.ndim != 4:
            raise ConfigurationError("V must be (M, K, n_tx, d)")
        if not np.all(np.isfinite(V)):
            raise ConfigurationError("precoders contain non-finite entries")
        object.__setattr__(self, "V", V)

    @property
    def M(self) -> int:
        return self.V.shape[0]

    @property
    def K(self) -> int:
        return self.V.shape[1]

    @property
    def n_streams(self) -> int:
        return self.V.shape[3]


@dataclass
class SolverParams:
    eps_sp: float = EPS_SP
    eps_dual: float = EPS_DUAL
    eps_rate: float = EPS_RATE
    eps_kkt: float = EPS_KKT
    eps_num: float = EPS_NUM
    max_iter: int = MAX_SP_ITER
    max_dual_evals: int = MAX_DUAL_EVALS
    dual_method: str = "auto"   # auto | coordinate | bisection | subgradient


@dataclass
class DualSolution:
    lam: np.ndarray           # (K,) optimal multipliers
    V: PrecoderSet            # closed-form minimizer at lam
    converged: bool
    evals: int                # dual-function evaluations used
    slack_residual: float     # max_k |lam_k g_k| / max(1, |J|)
    feas_residual: float      # max_k g_k (constraint violation, nats)
    value: float              # dual objective J(lam)


@dataclass
class WmmseState:
    V: PrecoderSet
    U: np.ndarray             # (M, K, N_R, d) receivers
    W: np.ndarray             # (M, K, d, d) MSE weights
    lam: np.ndarray           # (K,) multipliers of the final inner solve
    iterations: int
    objective_trace: np.ndarray   # sum power after init and each iteration
    converged: bool
    dual_converged: bool
    dual_evals: int
    rates: np.ndarray             # (K,) bits/s via the log-det formula
    surrogate_rates: np.ndarray   # (K,) bits/s via the weighted-MSE identity
    kkt_grad_residual: float
    kkt_slack_residual: float
    kkt_trace: np.ndarray | None = None   # per-iteration residual, if traced


# ---------------------------------------------------------------------------
# batch kernels
# ---------------------------------------------------------------------------

class _BatchProblem:
    """Channel tensors for a batch of independent instances in one mode.

    Coordinated: Hb[b,m,k,n] is the N_R x N_T block user k <- BS n.
    Comp: Hb[b,m,k] is the N_R x K*N_T composite row block of user k; the
    "cross" channel toward any user's signal is that same composite block.
    """

    def __init__(self, Hb: np.ndarray, mode: str):
        self.mode = mode
        self.Hb = Hb
        if mode == "coordinated":
            self.B, self.M, self.K, _, self.N_R, self.n_tx = Hb.shape
        else:
            self.B, self.M, self.K, self.N_R, self.n_tx = Hb.shape
        self.d = min(self.n_tx, self.N_R)
        self._kk = np.arange(self.K)
        self._eye_rx = np.eye(self.N_R)
        self._eye_tx = np.eye(self.n_tx)
        self._eye_d = np.eye(self.d)

    @classmethod
    def from_states(cls, states, mode: str) -> "_BatchProblem":
        H = np.stack([s.H for s in states])         # (B, M, K, K, N_R, N_T)
        if mode == "coordinated":
            return cls(H, mode)
        B, M, K, _, N_R, N_T = H.shape
        comp = np.transpose(H, (0, 1, 2, 4, 3, 5)).reshape(B, M, K, N_R, K * N_T)
        return cls(comp, mode)

    # -- linear maps --------------------------------------------------------

    def apply(self, V: np.ndarray) -> np.ndarray:
        """T[b,m,k,n] = (channel user k <- signal of user n) @ V[b,m,n]."""
        if self.mode == "coordinated":
            return np.einsum("bmknrt,bmntd->bmknrd", self.Hb, V)
        return np.einsum("bmkrt,bmntd->bmknrd", self.Hb, V)

    def direct(self) -> np.ndarray:
        """Per-user direct channel block, (B, M, K, N_R, n_tx)."""
        if self.mode == "coordinated":
            return self.Hb[:, :, self._kk, self._kk]
        return self.Hb

    def power(self, V: np.ndarray) -> np.ndarray:
        return np.einsum("bmktd,bmktd->b", V, V.conj()).real

    # -- rate / receiver updates --------------------------------------------

    def gram_totals(self, V: np.ndarray):
        """Returns (T, full covariance I + sum_n T_n T_n^H, interference-only
        covariance Omega), each per (b, m, k)."""
        T = self.apply(V)
        G = np.einsum("bmknrd,bmknsd->bmknrs", T, T.conj())
        Gsum = G.sum(axis=3)
        Gkk = G[:, :, self._kk, self._kk]
        cov = self._eye_rx + Gsum          # Omega + direct term
        omega = cov - Gkk
        return T, cov, omega

    def rate_nats(self, V: np.ndarray) -> np.ndarray:
        """Per-(b,m,k) ln det(I + H V V^H H^H Omega^{-1})."""
        _, cov, omega = self.gram_totals(V)
        return np.linalg.slogdet(cov)[1] - np.linalg.slogdet(omega)[1]

    def mmse_step(self, V: np.ndarray):
        """Steps 1-2: receivers, weights, and the per-(b,m,k) rate in nats.

        Returns (U, W, rate_nats, logdetW).  W is the inverse MSE matrix at
        the MMSE receiver, computed as inv(I - U^H H V).
        """
        T, cov, omega = self.gram_totals(V)
        Tkk = T[:, :, self._kk, self._kk]
        U = np.linalg.solve(cov, Tkk)
        rate = np.linalg.slogdet(cov)[1] - np.linalg.slogdet(omega)[1]
        E = self._eye_d - np.einsum("bmkre,bmkrd->bmked", U.conj(), Tkk)
        E = 0.5 * (E + conjT(E))
        W = np.linalg.solve(E, np.broadcast_to(
            self._eye_d, E.shape).astype(complex))
        W = 0.5 * (W + conjT(W))
        logdetW = np.linalg.slogdet(W)[1]
        return U, W, rate, logdetW

    # -- dual machinery -----------------------------------------------------

    def dual_precompute(self, U: np.ndarray, W: np.ndarray):
        """Quantities fixed during one dual solve (U, W frozen)."""
        C = np.einsum("bmkrd,bmkde,bmkse->bmkrs", U, W, U.conj())
        if self.mode == "coordinated":
            # D[b,m,n,k]: curvature that user n's receiver induces on the
            # precoder of user k (channel H[m,n,k])
            D = np.einsum("bmnkra,bmnrs,bmnksc->bmnkac",
                          self.Hb.conj(), C, self.Hb)
        else:
            D = np.einsum("bmnra,bmnrs,bmnsc->bmnac",
                          self.Hb.conj(), C, self.Hb)
        R0 = np.einsum("bmkra,bmkrd,bmkde->bmkae", self.direct().conj(), U, W)
        trW = np.einsum("bmkdd->bmk", W).real
        trC = np.einsum("bmkrr->bmk", C).real
        return {"C": C, "D": D, "R0": R0, "trW": trW, "trC": trC}

    def inner_precoders(self, work, lam: np.ndarray) -> np.ndarray:
        """Closed-form Lagrangian minimizer V*(lambda), lam shape (B, K)."""
        lam_m = lam / self.M
        if self.mode == "coordinated":
            A = self._eye_tx + np.einsum("bn,bmnkac->bmkac", lam_m, work["D"])
        else:
            A = (self._eye_tx
                 + np.einsum("bn,bmnac->bmac", lam_m, work["D"]))[:, :, None]
        rhs = work["R0"] * lam_m[:, None, :, None, None]
        return np.linalg.solve(A, rhs)

    def weighted_mse(self, work, U, W, V) -> np.ndarray:
        """Tr(W[m,k] E[m,k](V)) per (b, m, k), via the trace expansion
        Tr(W) + Tr(C) - 2 Re Tr(W U^H T_kk) + sum_n Tr(C T_kn T_kn^H)."""
        T = self.apply(V)
        Tkk = T[:, :, self._kk, self._kk]
        cross = np.einsum("bmkrs,bmknsd,bmknrd->bmk", work["C"], T, T.conj()).real
        direct = np.einsum("bmkde,bmkre,bmkrd->bmk", W, U.conj(), Tkk).real
        return work["trW"] + work["trC"] - 2.0 * direct + cross

    def constraint_residuals(self, work, U, W, V, logdetW, mu_bar) -> np.ndarray:
        """g[b,k] = avg_m(Tr(W E) - ln det W) - d + mu_bar: the amount by
        which user k's weighted-MSE constraint is violated (nats)."""
        twe = self.weighted_mse(work, U, W, V)
        return (twe - logdetW).mean(axis=1) - self.d + mu_bar

    def grad_residual(self, work, U, W, V, lam) -> np.ndarray:
        """Max-norm of the Lagrangian's V-gradient, normalized by max |V|."""
        lam_m = lam / self.M
        if self.mode == "coordinated":
            AV = V + np.einsum("bn,bmnkac,bmkce->bmkae", lam_m, work["D"], V)
        else:
            AV = V + np.einsum("bn,bmnac,bmkce->bmkae", lam_m, work["D"], V)
        grad = AV - work["R0"] * lam_m[:, None, :, None, None]
        scale = np.maximum(np.abs(V).max(axis=(1, 2, 3, 4)), 1e-30)
        return np.abs(grad).max(axis=(1, 2, 3, 4)) / scale


# ---------------------------------------------------------------------------
# public elementary operations
# ---------------------------------------------------------------------------

def _check_mode_shapes(H: ChannelState, V: PrecoderSet):
    n_tx = H.N_T if V.mode == "coordinated" else H.K * H.N_T
    if V.V.shape[:2] != (H.M, H.K) or V.V.shape[2] != n_tx:
        raise ConfigurationError(
            f"precoder shape {V.V.shape} inconsistent with channel "
            f"(M={H.M}, K={H.K}, N_T={H.N_T}) in mode {V.mode!r}")


def _direct_block(H: ChannelState, m: int, k: int, mode: str) -> np.ndarray:
    if mode == "coordinated":
        return H.H[m, k, k]
    return H.composite()[m, k]


def _cross_block(H: ChannelState, m: int, k: int, n: int, mode: str) -> np.ndarray:
    """Channel through which user n's signal reaches user k."""
    if mode == "coordinated":
        return H.H[m, k, n]
    return H.composite()[m, k]


def mmse_receiver(H: ChannelState, V: PrecoderSet, m: int, k: int) -> np.ndarray:
    """Linear MMSE receiver U[m,k] = (Omega + H V V^H H^H)^{-1} H V.

    Omega = I + sum_{n != k} of the interfering covariances.
    """
    _check_mode_shapes(H, V)
    cov = np.eye(H.N_R, dtype=complex)
    for n in range(H.K):
        Tn = _cross_block(H, m, k, n, V.mode) @ V.V[m, n]
        cov = cov + Tn @ conjT(Tn)
    Tk = _direct_block(H, m, k, V.mode) @ V.V[m, k]
    return np.linalg.solve(cov, Tk)


def mse_matrix(H: ChannelState, V: PrecoderSet, U: np.ndarray,
               m: int, k: int) -> np.ndarray:
    """E[m,k] = (I - U^H H V)(I - U^H H V)^H + U^H Omega U (Hermitian PSD)."""
    _check_mode_shapes(H, V)
    d = V.n_streams
    omega = np.eye(H.N_R, dtype=complex)
    for n in range(H.K):
        if n == k:
            continue
        Tn = _cross_block(H, m, k, n, V.mode) @ V.V[m, n]
        omega = omega + Tn @ conjT(Tn)
    A = np.eye(d, dtype=complex) - conjT(U) @ _direct_block(H, m, k, V.mode) @ V.V[m, k]
    E = A @ conjT(A) + conjT(U) @ omega @ U
    return 0.5 * (E + conjT(E))


def user_rates(H: ChannelState, V: PrecoderSet, B_W: float) -> np.ndarray:
    """Per-user rates R_k = B_W/(M ln2) * sum_m ln det(I + HVV^H H^H Omega^{-1}),
    in bits/s."""
    _check_mode_shapes(H, V)
    prob = _BatchProblem.from_states([H], V.mode)
    nats = prob.rate_nats(V.V[None])[0]       # (M, K)
    return B_W / (H.M * LN2) * nats.sum(axis=0)


def sum_power(V: PrecoderSet) -> float:
    """Total transmit power sum_{m,k} Tr(V V^H)."""
    return float(np.einsum("mktd,mktd->", V.V, V.V.conj()).real)


def bs_powers(V: PrecoderSet) -> np.ndarray:
    """Per-BS transmit powers, length K.

    Coordinated: BS k radiates exactly user k's precoders.  Comp: every BS
    radiates the rows of every user's composite precoder that map to its
    antennas (N_T consecutive rows per BS).
    """
    if V.mode == "coordinated":
        return np.einsum("mktd,mktd->k", V.V, V.V.conj()).real
    K = V.K
    n_t = V.V.shape[2] // K
    blocks = V.V.reshape(V.M, K, K, n_t, V.n_streams)   # (m, user, bs, row, col)
    return np.einsum("mkntd,mkntd->n", blocks, blocks.conj()).real


# ---------------------------------------------------------------------------
# initial points and stream projection
# ---------------------------------------------------------------------------

def _require_feasible(H: ChannelState):
    if not H.is_feasible():
        raise InfeasibleChannelError(
            f"slot {H.slot_index}: a direct link H[m,k,k] is numerically zero "
            f"(Tr(HH^H) <= {FEASIBLE_TRACE_TOL})")


def feasible_init(H: ChannelState, rc: RateConstraint) -> PrecoderSet:
    """Rate-feasible coordinated starting point on disjoint subcarriers.

    User k transmits only on subcarrier m=k, all d columns along the dominant
    right singular direction of its direct channel there, with power chosen so
    the average rate equals the target exactly.  Interference-free because no
    two users share a subcarrier; requires K <= M.
    """
    _require_feasible(H)
    M, K, N_R, N_T = H.M, H.K, H.N_R, H.N_T
    if K > M:
        raise ConfigurationError(
            f"disjoint-subcarrier start needs one subcarrier per user "
            f"(K={K} > M={M})")
    mu_bar = rc.mu_bar
    if mu_bar.shape != (K,):
        raise ConfigurationError(f"rate constraint length {mu_bar.shape} != K={K}")
    d = min(N_T, N_R)
    V = np.zeros((M, K, N_T, d), dtype=complex)
    for k in range(K):
        if mu_bar[k] <= 0.0:
            continue
        _, s, vh = np.linalg.svd(H.H[k, k, k])
        p = math.expm1(M * mu_bar[k]) / (s[0] ** 2)
        V[k, k] = math.sqrt(p / d) * np.repeat(vh[0].conj()[:, None], d, axis=1)
    return PrecoderSet(mode="coordinated", V=V)


def comp_initial_point(V_coord: PrecoderSet, N_R: int) -> PrecoderSet:
    """Embed a coordinated solution into comp shape.

    Rows (k*N_T)..((k+1)*N_T - 1) of user k's composite precoder carry its
    coordinated block; all other rows (and any extra stream columns) are zero.
    Effective transmit covariances are unchanged, so rates and powers match
    the coordinated point exactly.
    """
    if V_coord.mode != "coordinated":
        raise ConfigurationError("comp_initial_point expects a coordinated set")
    M, K, N_T, d = V_coord.V.shape
    d_comp = min(K * N_T, N_R)
    if d > d_comp:
        raise ConfigurationError(
            f"coordinated stream count {d} exceeds comp stream count {d_comp}")
    V = np.zeros((M, K, K * N_T, d_comp), dtype=complex)
    for k in range(K):
        V[:, k, k * N_T:(k + 1) * N_T, :d] = V_coord.V[:, k]
    return PrecoderSet(mode="comp", V=V)


def project_streams(V_wide, H: ChannelState, mode: str = "coordinated") -> PrecoderSet:
    """Reduce arbitrary-width precoders to d columns.

    Each block is projected onto the row space of its direct channel, then
    the projected covariance V V^H, whose rank is at most d, is refactored
    into exactly d columns via its eigendecomposition with eigenvalues in
    descending order.

    Guarantees: every user's own received-signal covariance is preserved
    exactly, and each block's transmit power cannot grow (energy in the
    direct channel's null space is shed).  Interference seen by other users
    usually shrinks as well, but the projected transmit covariance is not
    dominated by the original in the Loewner order, so a cross channel can
    see more energy after projection and individual rates are not ordered
    in general.
    """
    M, K = H.M, H.K
    n_tx = H.N_T if mode == "coordinated" else H.K * H.N_T
    d = min(n_tx, H.N_R)
    out = np.zeros((M, K, n_tx, d), dtype=complex)
    for m in range(M):
        for k in range(K):
            Vmk = np.asarray(V_wide[m][k], dtype=complex)
            if Vmk.ndim != 2 or Vmk.shape[0] != n_tx:
                raise ConfigurationError(
                    f"block ({m},{k}) has shape {Vmk.shape}, expected {n_tx} rows")
            Hd = _direct_block(H, m, k, mode)
            # orthonormal basis of span(H^H) = row space of the direct channel
            u_svd, s, _ = np.linalg.svd(conjT(Hd), full_matrices=False)
            rank = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
            if rank == 0:
                continue
            Q = u_svd[:, :rank]
            Vbar = Q @ (conjT(Q) @ Vmk)
            G = Vbar @ conjT(Vbar)
            evals, evecs = np.linalg.eigh(0.5 * (G + conjT(G)))
            order = np.argsort(evals)[::-1][:d]
            lam = np.clip(evals[order], 0.0, None)
            out[m, k, :, :len(order)] = evecs[:, order] * np.sqrt(lam)
    return PrecoderSet(mode=mode, V=out)


# ---------------------------------------------------------------------------
# Lagrangian dual of the weighted-MSE-constrained power minimization
# ---------------------------------------------------------------------------

def _as_batch_lambda(lam, K):
    lam = np.asarray(lam, dtype=float).reshape(1, K)
    if np.any(lam < 0):
        raise ConfigurationError("multipliers must be nonnegative")
    return lam


def dual_inner_precoders(lam, U: np.ndarray, W: np.ndarray,
                         H: ChannelState, mode: str = "coordinated") -> PrecoderSet:
    """Closed-form V*(lambda): unique minimizer of the Lagrangian for fixed
    receivers and weights.  lam is length K."""
    prob = _BatchProblem.from_states([H], mode)
    work = prob.dual_precompute(U[None], W[None])
    V = prob.inner_precoders(work, _as_batch_lambda(lam, H.K))[0]
    return PrecoderSet(mode=mode, V=V)


def dual_subgradient(lam, H: ChannelState, U: np.ndarray, W: np.ndarray,
                     rc: RateConstraint, mode: str = "coordinated") -> np.ndarray:
    """Gradient of the concave dual J at lam: the per-user weighted-MSE
    constraint residuals evaluated at V*(lambda)."""
    prob = _BatchProblem.from_states([H], mode)
    Ub, Wb = U[None], W[None]
    work = prob.dual_precompute(Ub, Wb)
    lamb = _as_batch_lambda(lam, H.K)
    V = prob.inner_precoders(work, lamb)
    logdetW = np.linalg.slogdet(Wb)[1]
    return prob.constraint_residuals(work, Ub, Wb, V, logdetW,
                                     rc.mu_bar[None])[0]


def dual_value(lam, H: ChannelState, U: np.ndarray, W: np.ndarray,
               rc: RateConstraint, mode: str = "coordinated") -> float:
    """J(lambda) = min_V Lagrangian = P(V*) + sum_k lam_k g_k(lambda)."""
    prob = _BatchProblem.from_states([H], mode)
    Ub, Wb = U[None], W[None]
    work = prob.dual_precompute(Ub, Wb)
    lamb = _as_batch_lambda(lam, H.K)
    V = prob.inner_precoders(work, lamb)
    logdetW = np.linalg.slogdet(Wb)[1]
    g = prob.constraint_residuals(work, Ub, Wb, V, logdetW, rc.mu_bar[None])
    return float(prob.power(V)[0] + (lamb * g).sum())


def lagrangian_value(lam, H: ChannelState, U: np.ndarray, W: np.ndarray,
                     rc: RateConstraint, V: PrecoderSet) -> float:
    """Lagrangian L(V; lambda) at an arbitrary precoder set (oracle hook for
    stationarity checks)."""
    prob = _BatchProblem.from_states([H], V.mode)
    Ub, Wb = U[None], W[None]
    work = prob.dual_precompute(Ub, Wb)
    logdetW = np.linalg.slogdet(Wb)[1]
    g = prob.constraint_residuals(work, Ub, Wb, V.V[None], logdetW,
                                  rc.mu_bar[None])
    lamb = _as_batch_lambda(lam, H.K)
    return float(prob.power(V.V[None])[0] + (lamb * g).sum())


def weighted_mse_gradient(H: ChannelState, V: PrecoderSet, U: np.ndarray,
                          W: np.ndarray) -> np.ndarray:
    """Analytic conjugate-gradient of sum_{m,k} Tr(W E) w.r.t. V, shape of V.

    Own-block term -H^H U W plus the interference curvature induced on each
    block by every receiver; the oracle for finite-difference checks.
    """
    prob = _BatchProblem.from_states([H], V.mode)
    Ub, Wb = U[None], W[None]
    work = prob.dual_precompute(Ub, Wb)
    Vb = V.V[None]
    if V.mode == "coordinated":
        DV = np.einsum("bmnkac,bmkce->bmkae", work["D"], Vb)
    else:
        DV = np.einsum("bmnac,bmkce->bmkae", work["D"], Vb)
    return (DV - work["R0"])[0]


class _DualState:
    """Mutable scratch for one batched dual solve."""

    def __init__(self, prob, work, logdetW, mu_bar, lam0, active,
                 tol_slack, ftol):
        self.prob = prob
        self.work = work
        self.logdetW = logdetW
        self.mu_bar = mu_bar
        self.lam = lam0.copy()
        self.active = active          # (B, K) users with mu_bar > 0
        self.evals = 0
        self.U = None
        self.W = None
        self.tol_slack = tol_slack    # per-coordinate |lam*g| / |J| target
        self.ftol = ftol              # absolute residual tolerance, nats
        self.J_est = np.ones(lam0.shape[0])   # |J| scale for slack targets

    def full_eval(self, lam):
        """V*(lam), residual vector g, and power for every batch element."""
        V = self.prob.inner_precoders(self.work, lam)
        g = self.prob.constraint_residuals(self.work, self.U, self.W, V,
                                           self.logdetW, self.mu_bar)
        self.evals += 1
        return V, g, self.prob.power(V)


def _coordinate_root(state: _DualState, k: int, budget: int) -> int:
    """Move lam[:, k] to the root of g_k(lam_k; lam_-k) for all batch
    elements, via bracketing plus Illinois iterations.

    g_k is continuous and nonincreasing in lam_k, positive at lam_k = 0
    whenever the target is positive, so a sign change brackets the root.
    """
    lam = state.lam
    act = state.active[:, k]
    if not np.any(act):
        return 0
    B = lam.shape[0]
    used = 0

    def g_at(x):
        nonlocal used
        trial = lam.copy()
        trial[:, k] = np.where(act, x, trial[:, k])
        _, g, _ = state.full_eval(trial)
        used += 1
        return g[:, k]

    scale = np.maximum(state.lam_scale[:, k], 1e-30)
    x0 = np.where(lam[:, k] > 0, lam[:, k], scale)
    g0 = g_at(x0)
    slack_target = 0.5 * state.tol_slack * state.J_est
    exact = act & (np.abs(x0 * g0) <= slack_target) & (np.abs(g0) <= 0.5 * state.ftol)

    lo = np.zeros(B)
    glo = np.full(B, np.inf)          # g(0) > 0 always holds for active users
    hi = np.full(B, np.inf)
    ghi = np.full(B, -np.inf)
    pos = g0 > 0
    lo = np.where(pos, x0, lo)
    glo = np.where(pos, g0, glo)
    hi = np.where(~pos, x0, hi)
    ghi = np.where(~pos, g0, ghi)

    # expand upward where g(x0) > 0, downward where g(x0) < 0
    need_hi = pos & act & ~exact
    factor = 4.0
    x = x0.copy()
    while np.any(need_hi) and used < budget:
        x = np.where(need_hi, x * factor, x)
        g = g_at(np.where(need_hi, x, lam[:, k]))
        newly = need_hi & (g <= 0)
        hi = np.where(newly, x, hi)
        ghi = np.where(newly, g, ghi)
        adv = need_hi & (g > 0)
        lo = np.where(adv, x, lo)
        glo = np.where(adv, g, glo)
        need_hi &= g > 0
        factor = min(factor * 2.0, 64.0)
        if factor >= 64.0 and np.any(need_hi & (x > 1e280)):
            # no finite multiplier meets the target with these (U, W)
            hi = np.where(need_hi & (x > 1e280), x, hi)
            ghi = np.where(need_hi & (x > 1e280), -1e-30, ghi)
            need_hi &= x <= 1e280
    need_lo = (~pos) & act & ~exact
    factor = 4.0
    x = x0.copy()
    while np.any(need_lo) and used < budget:
        x = np.where(need_lo, x / factor, x)
        floor_hit = need_lo & (x < scale * 1e-18)
        lo = np.where(floor_hit, 0.0, lo)            # g(0) > 0 by construction
        glo = np.where(floor_hit, np.maximum(state.mu_bar[:, k], 1e-12), glo)
        need_lo &= ~floor_hit
        if not np.any(need_lo):
            break
        g = g_at(np.where(need_lo, x, lam[:, k]))
        newly = need_lo & (g >= 0)
        lo = np.where(newly, x, lo)
        glo = np.where(newly, g, glo)
        shrink = need_lo & (g < 0)
        hi = np.where(shrink, x, hi)
        ghi = np.where(shrink, g, ghi)
        need_lo &= g < 0
        factor = min(factor * 2.0, 64.0)

    root = np.where(np.isfinite(hi), 0.5 * (lo + np.where(np.isfinite(hi), hi, lo)), lo)
    root = np.where(exact, x0, root)

    # Illinois refinement on elements with a finite bracket.  A coordinate is
    # done when its complementary-slackness share and absolute residual are
    # both below target, or the bracket has collapsed to rounding width.
    side = np.zeros(B, dtype=int)     # +1 kept lo last, -1 kept hi last
    live = act & np.isfinite(hi) & ~exact
    for _ in range(80):
        if not np.any(live) or used >= budget:
            break
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            denom = ghi - glo
            secant_ok = live & np.isfinite(glo) & (np.abs(denom) > 0)
            x = np.where(secant_ok,
                         hi - ghi * (hi - lo) / np.where(denom == 0, 1, denom),
                         0.5 * (lo + hi))
            inside = (x > lo) & (x < hi)
            x = np.where(inside, x, 0.5 * (lo + hi))
        g = g_at(np.where(live, x, lam[:, k]))
        gpos = g > 0
        upd_lo = live & gpos
        upd_hi = live & ~gpos
        # Illinois: halve the stale endpoint's residual on repeated sides
        ghi = np.where(upd_lo & (side == 1), 0.5 * ghi, ghi)
        glo = np.where(upd_hi & (side == -1), 0.5 * glo, glo)
        lo = np.where(upd_lo, x, lo)
        glo = np.where(upd_lo, g, glo)
        hi = np.where(upd_hi, x, hi)
        ghi = np.where(upd_hi, g, ghi)
        side = np.where(upd_lo, 1, np.where(upd_hi, -1, side))
        hit = (np.abs(x * g) <= slack_target) & (np.abs(g) <= 0.5 * state.ftol)
        tight = hi - lo <= 1e-12 * np.maximum(hi, 1e-300)
        root = np.where(live, np.where(hit, x, 0.5 * (lo + hi)), root)
        live &= ~(hit | tight)

    lam[:, k] = np.where(act, np.where(np.isfinite(root), root, lo), 0.0)
    return used


def _solve_dual_batch(prob: _BatchProblem, U, W, logdetW, mu_bar,
                      params: SolverParams, lam0=None, work=None):
    """Maximize the concave dual over lambda >= 0 for a whole batch.

    Default method: cyclic coordinate root finding on the residuals g_k
    (each coordinate update is an exact 1-D maximization of the smooth
    concave dual).  K=1 reduces to plain bisection automatically.  The
    projected-subgradient ascent of the simpler textbook variety is kept as
    dual_method="subgradient".
    """
    B, K = mu_bar.shape
    active = mu_bar > 0
    if lam0 is None:
        lam0 = np.zeros((B, K))
    if work is None:
        work = prob.dual_precompute(U, W)
    ftol = 1e-7 * max(1.0, float(mu_bar.max(initial=0.0)))
    # The residual product lam_k * g_k bounds the first-order power error of
    # the returned inner minimizer, and those errors accumulate over the K
    # coordinates.  Solving each root well inside the relative-descent
    # allowance keeps the outer power trace monotone to eps_num.
    tol_slack = min(params.eps_dual, 0.1 * params.eps_num / K)
    state = _DualState(prob, work, logdetW, mu_bar,
                       lam0.astype(float), active, tol_slack, ftol)
    state.U, state.W = U, W

    # multiplier scale from the own-link curvature: lam ~ M / (tr(D_own)/n_tx)
    if prob.mode == "coordinated":
        Down = np.einsum("bmkkaa->bmk", state.work["D"]).real
    else:
        Down = np.einsum("bmkaa->bmk", state.work["D"]).real
    s = np.maximum(Down.mean(axis=1) / prob.n_tx, 1e-300)
    state.lam_scale = prob.M / s

    method = params.dual_method
    if method == "auto":
        method = "coordinate"
    if method == "bisection" and K > 1:
        method = "coordinate"

    if method == "subgradient":
        return _solve_dual_subgradient(state, params)

    budget = params.max_dual_evals
    converged = False
    V = None
    slack = feas = np.inf
    J = np.zeros(B)
    for _ in range(80):
        V, g, P = state.full_eval(state.lam)
        J = P + (state.lam * g).sum(axis=1)
        state.J_est = np.maximum(1.0, np.abs(J))
        slack_k = np.abs(state.lam * g) / state.J_est[:, None]      # (B, K)
        feas_k = np.where(active, g, -np.inf)
        slack = float(slack_k.max())
        feas = float(feas_k.max())
        if slack <= tol_slack and feas <= ftol:
            converged = True
            break
        if state.evals >= budget:
            break
        for k in range(K):
            if (slack_k[:, k].max() <= 0.5 * tol_slack
                    and feas_k[:, k].max() <= 0.5 * ftol):
                continue
            _coordinate_root(state, k, budget - state.evals)
            if state.evals >= budget:
                break
    return state.lam, V, converged, state.evals, slack, feas, J


def _solve_dual_subgradient(state: _DualState, params: SolverParams):
    """Projected subgradient ascent with diminishing steps sigma0/i."""
    prob = state.prob
    lam = np.where(state.active, state.lam_scale, 0.0) if not state.lam.any() \
        else state.lam
    best = None
    sigma0 = state.lam_scale
    for i in range(1, params.max_dual_evals + 1):
        V, g, P = state.full_eval(lam)
        J = P + (lam * g).sum(axis=1)
        slack_b = np.abs(lam * g).max(axis=1) / np.maximum(1.0, np.abs(J))
        feas_b = np.where(state.active, g, -np.inf).max(axis=1)
        if best is None or float(J.sum()) > best[0]:
            best = (float(J.sum()), lam.copy(), V, float(slack_b.max()),
                    float(feas_b.max()), J)
        if best[3] <= params.eps_dual and best[4] <= state.ftol:
            break
        lam = np.clip(lam + (sigma0 / i) * g, 0.0, None)
        lam = np.where(state.active, lam, 0.0)
    _, lam, V, slack, feas, J = best
    converged = slack <= params.eps_dual and feas <= state.ftol
    state.lam = lam
    return lam, V, converged, state.evals, slack, feas, J


def solve_dual(U: np.ndarray, W: np.ndarray, H: ChannelState,
               rc: RateConstraint, mode: str = "coordinated",
               params: SolverParams | None = None,
               lam0=None) -> DualSolution:
    """Optimal multipliers and the matching closed-form precoders for one
    instance with fixed (U, W)."""
    params = params or SolverParams()
    prob = _BatchProblem.from_states([H], mode)
    Ub, Wb = U[None], W[None]
    logdetW = np.linalg.slogdet(Wb)[1]
    lam0b = None if lam0 is None else np.asarray(lam0, dtype=float)[None]
    lam, V, conv, evals, slack, feas, J = _solve_dual_batch(
        prob, Ub, Wb, logdetW, rc.mu_bar[None], params, lam0b)
    return DualSolution(lam=lam[0], V=PrecoderSet(mode=mode, V=V[0]),
                        converged=conv, evals=evals, slack_residual=slack,
                        feas_residual=feas, value=float(J[0]))


# ---------------------------------------------------------------------------
# the alternating solver
# ---------------------------------------------------------------------------

def _sp_batch(prob: _BatchProblem, mu_bar: np.ndarray, V0: np.ndarray,
              B_W: float, params: SolverParams, trace_kkt: bool = False):
    """Alternating updates for a batch; every element runs to its own stop.

    An element freezes at iterate t once the relative power change of step t
    was below eps_sp AND the measured KKT gradient residual of iterate t is
    below eps_kkt.  The residual comes for free one step later: iteration
    t+1's receiver update is exactly the fresh (U, W) at iterate t, so the
    exit contract is enforced on measured values, not proxies.

    Returns a dict of batched outputs; see algorithm_sp for the single-
    instance packaging.
    """
    B = prob.B
    V = V0.astype(complex).copy()
    P = prob.power(V)
    traces = [P.copy()]
    kkt_rows = [] if trace_kkt else None

    done = np.zeros(B, dtype=bool)
    stop_iter = np.zeros(B, dtype=int)
    out_V = V.copy()
    out_lam = np.zeros((B, prob.K))
    out_dual_ok = np.ones(B, dtype=bool)
    evals_total = 0
    lam = None
    power_ok = np.zeros(B, dtype=bool)

    for it in range(1, params.max_iter + 1):
        U, W, _, logdetW = prob.mmse_step(V)
        work = prob.dual_precompute(U, W)
        if lam is not None:
            kkt_prev = prob.grad_residual(work, U, W, V, lam)
            if trace_kkt:
                kkt_rows.append(kkt_prev)
            newly = ~done & power_ok & (kkt_prev <= params.eps_kkt)
            out_V[newly] = V[newly]
            out_lam[newly] = lam[newly]
            stop_iter[newly] = it - 1
            done |= newly
            if done.all():
                break
        lam_new, V_new, dual_ok, evals, _, _, _ = _solve_dual_batch(
            prob, U, W, logdetW, mu_bar, params, lam, work)
        evals_total += evals
        out_dual_ok &= done | dual_ok
        P_new = prob.power(V_new)
        power_ok = np.abs(P_new - P) / np.maximum(P, 1e-300) <= params.eps_sp
        lam, V, P = lam_new, V_new, P_new
        traces.append(P.copy())
    hit_cap = ~done
    if np.any(hit_cap):
        out_V[hit_cap] = V[hit_cap]
        out_lam[hit_cap] = lam[hit_cap] if lam is not None else 0.0
        stop_iter[hit_cap] = len(traces) - 1

    # final consistency pass at the frozen iterates
    U, W, rate_nats, logdetW = prob.mmse_step(out_V)
    work = prob.dual_precompute(U, W)
    grad_res = prob.grad_residual(work, U, W, out_V, out_lam)
    # surrogate rate via the weight determinant: Rbar = avg_m ln det W
    rbar = logdetW.mean(axis=1)                       # (B, K) nats
    rates = B_W / LN2 * rate_nats.mean(axis=1)
    surrogate = B_W / LN2 * rbar
    P_out = prob.power(out_V)
    slack_res = np.abs(out_lam * (mu_bar - rbar)).max(axis=1) / np.maximum(1.0, P_out)

    return {
        "V": out_V, "U": U, "W": W, "lam": out_lam,
        "iterations": stop_iter, "converged": done,
        "dual_converged": out_dual_ok, "dual_evals": evals_total,
        "trace": np.stack(traces), "rates": rates, "surrogate_rates": surrogate,
        "kkt_grad": grad_res, "kkt_slack": slack_res, "power": P_out,
        "kkt_trace": np.stack(kkt_rows) if trace_kkt and kkt_rows else None,
    }


def _package_state(res, b: int, mode: str) -> WmmseState:
    n_it = int(res["iterations"][b])
    return WmmseState(
        V=PrecoderSet(mode=mode, V=res["V"][b]),
        U=res["U"][b], W=res["W"][b], lam=res["lam"][b],
        iterations=n_it,
        objective_trace=res["trace"][:n_it + 1, b].copy(),
        converged=bool(res["converged"][b]),
        dual_converged=bool(res["dual_converged"][b]),
        dual_evals=int(res["dual_evals"]),
        rates=res["rates"][b], surrogate_rates=res["surrogate_rates"][b],
        kkt_grad_residual=float(res["kkt_grad"][b]),
        kkt_slack_residual=float(res["kkt_slack"][b]),
        kkt_trace=None if res["kkt_trace"] is None else res["kkt_trace"][:, b].copy(),
    )


def algorithm_sp(H: ChannelState, rc: RateConstraint,
                 mode: str = "coordinated",
                 init: PrecoderSet | None = None,
                 params: SolverParams | None = None,
                 trace_kkt: bool = False) -> WmmseState:
    """Alternating minimum-power solve for one channel realization.

    Coordinated mode defaults to the disjoint-subcarrier feasible start; comp
    mode has no generic feasible start and requires ``init`` (normally the
    block-embedded coordinated solution, see comp_initial_point).
    """
    params = params or SolverParams()
    _require_feasible(H)
    if init is None:
        if mode != "coordinated":
            raise ConfigurationError("comp mode requires an explicit init")
        init = feasible_init(H, rc)
    elif init.mode != mode:
        raise ConfigurationError(
            f"init mode {init.mode!r} does not match requested mode {mode!r}")
    prob = _BatchProblem.from_states([H], mode)
    res = _sp_batch(prob, rc.mu_bar[None], init.V[None], rc.B_W, params,
                    trace_kkt)
    return _package_state(res, 0, mode)


def algorithm_sp_batch(states, rcs, mode: str = "coordinated",
                       inits=None, params: SolverParams | None = None):
    """Solve many same-shaped instances at once; returns list of WmmseState.

    ``rcs`` may be one RateConstraint shared by all instances or a sequence
    of per-instance constraints; ``inits`` likewise (None selects the
    feasible start per instance, coordinated mode only).
    """
    params = params or SolverParams()
    states = list(states)
    if not states:
        return []
    for s in states:
        _require_feasible(s)
    B = len(states)
    rc_list = [rcs] * B if isinstance(rcs, RateConstraint) else list(rcs)
    B_W = rc_list[0].B_W
    mu_bar = np.stack([rc.mu_bar for rc in rc_list])
    if inits is None:
        if mode != "coordinated":
            raise ConfigurationError("comp mode requires explicit inits")
        inits = [feasible_init(s, rc) for s, rc in zip(states, rc_list)]
    V0 = np.stack([p.V for p in inits])
    prob = _BatchProblem.from_states(states, mode)
    res = _sp_batch(prob, mu_bar, V0, B_W, params)
    return [_package_state(res, b, mode) for b in range(B)]
