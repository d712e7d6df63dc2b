"""Layer pruning: magnitude thresholding and FeTa.

FeTa fits a sparse replacement ``U`` for a ReLU layer's weights by
minimising, over the tapped activations ``(A, B)``,

    (1/m) sum_j ||rho(U^T a_j) - b_j||^2 + lam * ||U||_1

with ``rho`` the softplus surrogate. Expanding the square gives a
difference of convex functions ``g - h`` (``g`` collects the ``rho^2`` and
``b^2`` terms, ``h`` the cross terms ``2 b rho``, convex because ``b >= 0``).
DCA linearises ``h`` at the current point and solves the remaining convex
problem with accelerated proximal SVRG.

``dc_parts``, ``grad_h`` and ``grad_g_minibatch`` work with the plain sums
over samples; the solvers divide by ``m`` so that step sizes and ``lam`` do
not depend on the sample count.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .linalg import ParameterError, as_matrix, frobenius, make_rng, relu

log = logging.getLogger(__name__)


class SolverDiverged(FloatingPointError):
    """The proximal SVRG iterates became non-finite (step size too large)."""


# --- hard thresholding -------------------------------------------------------

@dataclass(frozen=True)
class ThresholdSpec:
    mode: str = "sparsity"  # "absolute" or "sparsity"
    value: float = 0.9

    def __post_init__(self):
        if self.mode == "absolute":
            if not self.value >= 0:
                raise ParameterError("absolute threshold must be >= 0")
        elif self.mode == "sparsity":
            if not 0 <= self.value < 1:
                raise ParameterError("target sparsity must be in [0, 1)")
        else:
            raise ParameterError(f"unknown threshold mode {self.mode!r}")


def magnitude_cutoff(W, sparsity):
    """Nearest-rank ``sparsity``-quantile of |W| (-1 when nothing is cut)."""
    mags = np.sort(np.abs(np.asarray(W, dtype=np.float64)), axis=None)
    rank = math.ceil(sparsity * mags.size - 1e-9)
    return -1.0 if rank <= 0 else float(mags[rank - 1])


def hard_threshold(W, spec):
    """``W * (|W| > t)``; in sparsity mode ``t`` is the magnitude quantile."""
    W = as_matrix(W, "W")
    t = spec.value if spec.mode == "absolute" else magnitude_cutoff(W, spec.value)
    return np.where(np.abs(W) > t, W, 0.0)


# --- DC decomposition ---------------------------------------------------------

def _check_tap(U, A, B):
    U = as_matrix(U, "U")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if U.shape[0] != A.shape[0] or U.shape[1] != B.shape[0] or A.shape[1] != B.shape[1]:
        raise ParameterError(f"inconsistent shapes U{U.shape} A{A.shape} B{B.shape}")
    if np.any(B < 0):
        raise ParameterError("B has negative entries; layer outputs must be post-ReLU")
    return U, A, B


def dc_parts(U, A, B, theta):
    """Convex pieces ``(g, h)`` of the smoothed reconstruction loss, summed over samples."""
    U, A, B = _check_tap(U, A, B)
    return kernels.dc_sums(U.T @ A, B, theta)


def grad_h(U, A, B, theta):
    """Full-batch gradient of ``h``: column i is sum_j 2 b_ij sigmoid(theta u_i.a_j) a_j over b_ij > 0."""
    U, A, B = _check_tap(U, A, B)
    return A @ kernels.cross_grad_factor(U.T @ A, B, theta).T


def grad_g_minibatch(U, A, B, theta, C, m_total):
    """Minibatch estimate of the gradient of ``g(U) - Tr(U^T C)``.

    The ``g`` part is rescaled by ``m_total / batch`` to estimate the full
    sum; the linear term is exact, so ``C`` is subtracted unscaled.
    ``B`` only enters ``g`` through a constant and is accepted for symmetry.
    """
    A = as_matrix(A, "A")
    if A.shape[1] == 0:
        raise ParameterError("empty minibatch")
    G = A @ kernels.sq_grad_factor(U.T @ A, theta).T
    return G * (m_total / A.shape[1]) - C


def prox_l1(V, tau):
    """Soft threshold ``sign(v) max(|v| - tau, 0)``, the prox of ``tau |.|_1``."""
    if tau < 0:
        raise ParameterError("tau must be >= 0")
    return kernels.soft_threshold(V, tau)


# --- FeTa -------------------------------------------------------------------

@dataclass
class FetaConfig:
    lam: float = 0.0
    theta: float = 20.0
    K: int = 8
    S: int = 3
    T: int = None  # None: ceil(m / batch)
    batch: int = 200
    eta: float = 1e-3
    eta_fallback: float = 1e-4
    beta: float = 0.95
    seed: int = 0
    target_sparsity: float = None
    zero_eps: float = 1e-8
    tol: float = 1e-4
    tune_runs: int = 12
    tune_K: int = 3
    sparsity_tol: float = 0.02

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lam must be >= 0")
        if not self.theta > 0:
            raise ParameterError("theta must be positive")
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if self.S < 1 or self.batch < 1 or (self.T is not None and self.T < 1):
            raise ParameterError("S, T and batch must be >= 1")
        if not (self.eta > 0 and self.eta_fallback > 0):
            raise ParameterError("step sizes must be positive")
        if not 0 <= self.beta < 1:
            raise ParameterError("beta must be in [0, 1)")
        if self.target_sparsity is not None and not 0 <= self.target_sparsity < 1:
            raise ParameterError("target_sparsity must be in [0, 1)")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return FetaConfig(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class PruneResult:
    U: np.ndarray
    bias: np.ndarray
    sparsity: float
    objective_trace: list  # exact-ReLU objective per outer iteration, U^0 first
    smoothed_trace: list  # softplus DC objective, the quantity DCA descends
    layer_error: float
    wall_time: float
    lam: float
    eta: float
    n_outer: int
    tuning: list = field(default_factory=list)

    def record(self, timing=True):
        """JSON-ready summary (without the matrices)."""
        out = {
            "sparsity": self.sparsity,
            "layer_error": self.layer_error,
            "objective_trace": list(self.objective_trace),
            "smoothed_trace": list(self.smoothed_trace),
            "lam": self.lam,
            "eta": self.eta,
            "n_outer": self.n_outer,
            "tuning": [list(t) for t in self.tuning],
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def sparsity_of(U, zero_eps=0.0):
    U = np.asarray(U)
    return float(np.count_nonzero(np.abs(U) <= zero_eps)) / U.size


class _Problem:
    """The FeTa objective on one tap, with the bias optionally stacked as the last row of U."""

    def __init__(self, A, B, theta, n_pen):
        self.A = np.ascontiguousarray(A)
        self.B = np.ascontiguousarray(B)
        self.m = A.shape[1]
        self.theta = theta
        self.n_pen = n_pen

    def l1(self, U):
        return float(np.sum(np.abs(U[: self.n_pen])))

    def objective(self, U, lam):
        """Smoothed DC objective: (g - h)/m + lam |U|_1."""
        g, h = kernels.dc_sums(U.T @ self.A, self.B, self.theta)
        return (g - h) / self.m + lam * self.l1(U)

    def relu_objective(self, U, lam):
        R = relu(U.T @ self.A) - self.B
        return float(np.sum(R * R)) / self.m + lam * self.l1(U)

    def subproblem(self, U, C, lam):
        """Convex model at the current linearisation: (g - <U, C>)/m + lam |U|_1."""
        g, _ = kernels.dc_sums(U.T @ self.A, self.B, self.theta)
        return (g - float(np.sum(U * C))) / self.m + lam * self.l1(U)

    def grad_h(self, U):
        return self.A @ kernels.cross_grad_factor(U.T @ self.A, self.B, self.theta).T

    def grad(self, U, C, idx=None):
        """Mean-scaled gradient of g - <U, C>; ``idx`` selects a minibatch."""
        A = self.A if idx is None else self.A[:, idx]
        return grad_g_minibatch(U, A, None, self.theta, C, self.m) / self.m


def _svrg(prob, U0, C, lam, eta, cfg, rng):
    m = prob.m
    batch = min(cfg.batch, m)
    T = cfg.T if cfg.T is not None else math.ceil(m / batch)
    tau = eta * lam
    x_tilde = np.array(U0, dtype=np.float64)
    for _ in range(cfg.S):
        u_tilde = prob.grad(x_tilde, C)
        x = y = x_tilde
        order = np.arange(m) if batch == m else rng.permutation(m)
        pos = 0
        for _ in range(T):
            if pos + batch > m:
                order = np.arange(m) if batch == m else rng.permutation(m)
                pos = 0
            # full batch: idx None, so the correction below is exactly zero
            idx = None if batch == m else order[pos:pos + batch]
            pos += batch
            u = prob.grad(y, C, idx) + (u_tilde - prob.grad(x_tilde, C, idx))
            x, y = kernels.prox_momentum_step(y, u, x, eta, tau, cfg.beta, prob.n_pen)
        if not np.all(np.isfinite(x)):
            raise SolverDiverged(f"non-finite iterate with eta={eta:g}")
        x_tilde = x
    return x_tilde


def acc_prox_svrg(U0, A, B, C, cfg, rng=None, n_pen=None, eta=None):
    """Solve ``min_U (g(U) - Tr(U^T C))/m + lam |U|_1`` by accelerated proximal SVRG.

    Each of ``cfg.S`` stages takes a full gradient at the snapshot, then
    ``T`` minibatch steps with the variance-reduced gradient, a soft-threshold
    prox of width ``eta * lam`` and momentum ``beta``. Returns the last
    snapshot. ``n_pen`` limits the l1 penalty to the first rows of U.
    """
    U0, A, B = _check_tap(U0, A, B)
    prob = _Problem(A, B, cfg.theta, U0.shape[0] if n_pen is None else n_pen)
    rng = make_rng(cfg.seed) if rng is None else rng
    return _svrg(prob, U0, np.asarray(C, dtype=np.float64), cfg.lam, cfg.eta if eta is None else eta, cfg, rng)


def _dca(prob, U0, cfg, lam, K):
    """Run DCA from U0; returns (U, smoothed trace, relu trace, eta used, iterations)."""
    rng = make_rng(cfg.seed)
    U = np.array(U0, dtype=np.float64)
    trace = [prob.objective(U, lam)]
    exact_trace = [prob.relu_objective(U, lam)]
    eta = cfg.eta
    k = 0
    for k in range(1, K + 1):
        C = prob.grad_h(U)
        q_old = prob.subproblem(U, C, lam)
        U_new = None
        for step in dict.fromkeys((eta, cfg.eta_fallback)):
            try:
                cand = _svrg(prob, U, C, lam, step, cfg, rng)
            except SolverDiverged:
                log.warning("acc-prox-svrg diverged at eta=%g", step)
                continue
            if prob.subproblem(cand, C, lam) <= q_old:
                U_new, eta = cand, step
                break
            log.info("subproblem not decreased at eta=%g", step)
        if U_new is None:
            # neither step size improved the convex model: U is (numerically) stationary
            break
        change = frobenius(U_new - U) / max(frobenius(U), 1e-300)
        U = U_new
        trace.append(prob.objective(U, lam))
        exact_trace.append(prob.relu_objective(U, lam))
        if change < cfg.tol:
            break
    return U, trace, exact_trace, eta, k


def _snap(U, n_pen, eps):
    U = U.copy()
    head = U[:n_pen]
    head[np.abs(head) <= eps] = 0.0
    return U


def _lam_max(prob, U0, seed):
    """Largest |gradient| of the first convex model at U = 0, on a 10% subsample."""
    rng = make_rng(seed)
    m = prob.m
    idx = np.sort(rng.choice(m, size=max(1, m // 10), replace=False))
    sub = _Problem(prob.A[:, idx], prob.B[:, idx], prob.theta, prob.n_pen)
    C = sub.grad_h(U0)
    G = sub.grad(np.zeros_like(U0), C)
    return float(np.max(np.abs(G[: prob.n_pen])))


def feta(W, tap, cfg, bias=None):
    """Prune the weights of one ReLU layer from its activation tap.

    Parameters
    ----------
    W : (d_in, d_out) array
        Current weights; also the starting point.
    tap : LayerTap
        Inputs ``A`` and post-ReLU outputs ``B`` of the layer.
    cfg : FetaConfig
        With ``target_sparsity`` set, ``lam`` is tuned by bisection.
    bias : (d_out,) array, optional
        Layer bias. It is optimised along with ``U`` (as an extra input row
        of ones) but never penalised or counted in the sparsity.

    Returns
    -------
    PruneResult
    """
    W = as_matrix(W, "W")
    d_in = W.shape[0]
    if bias is not None:
        A = tap.augmented_A()
        U0 = np.vstack([W, np.asarray(bias, dtype=np.float64).reshape(1, -1)])
    else:
        A = np.asarray(tap.A)
        U0 = W.copy()
    _check_tap(U0, A, tap.B)
    prob = _Problem(A, np.asarray(tap.B), cfg.theta, d_in)

    t0 = time.perf_counter()
    tuning = []
    lam = cfg.lam
    if cfg.target_sparsity is not None:
        lam, tuning = _tune_lam(prob, U0, cfg)
    U, smoothed, trace, eta, n_outer = _dca(prob, U0, cfg, lam, cfg.K)
    U = _snap(U, d_in, cfg.zero_eps)
    wall = time.perf_counter() - t0

    weights, new_bias = U[:d_in], (U[d_in] if bias is not None else None)
    Z = weights.T @ tap.A
    if new_bias is not None:
        Z = Z + new_bias[:, None]
    return PruneResult(
        U=weights,
        bias=new_bias,
        sparsity=sparsity_of(weights, cfg.zero_eps),
        objective_trace=trace,
        smoothed_trace=smoothed,
        layer_error=frobenius(relu(Z) - tap.B),
        wall_time=wall,
        lam=lam,
        eta=eta,
        n_outer=n_outer,
        tuning=tuning,
    )


def _tune_lam(prob, U0, cfg):
    """Bisect lam until the pruned sparsity is within ``sparsity_tol`` of the target.

    Short runs (``tune_K`` outer iterations) bracket and bisect first; the
    candidate is then checked with a full-length run and, if that misses,
    refined by bisection on full-length runs.
    """
    target, tol, n_pen = cfg.target_sparsity, cfg.sparsity_tol, prob.n_pen
    history = []
    if target == 0:
        return 0.0, history

    def run(lam, K):
        U = _dca(prob, U0, cfg, lam, K)[0]
        s = sparsity_of(_snap(U, n_pen, cfg.zero_eps)[:n_pen], cfg.zero_eps)
        history.append((lam, K, s))
        return s

    def bisect(lo, hi, K, runs):
        for _ in range(runs):
            mid = 0.5 * (lo + hi)
            s = run(mid, K)
            if abs(s - target) <= tol:
                return mid, lo, hi
            lo, hi = (mid, hi) if s < target else (lo, mid)
        return None, lo, hi

    def bracket(lo, hi, K):
        for _ in range(60):
            s = run(hi, K)
            if abs(s - target) <= tol or s >= target:
                return lo, hi, s
            lo, hi = hi, 2.0 * hi
        raise RuntimeError("could not reach the target sparsity")

    lo, hi, s = bracket(0.0, _lam_max(prob, U0, cfg.seed), cfg.tune_K)
    lam = hi
    if abs(s - target) > tol:
        found, lo, hi = bisect(lo, hi, cfg.tune_K, cfg.tune_runs)
        lam = hi if found is None else found

    s = run(lam, cfg.K)
    if abs(s - target) <= tol:
        return lam, history
    if s > target:
        lo, hi = 0.0, lam
    else:
        lo, hi, s = bracket(lam, 2.0 * lam, cfg.K)
        if abs(s - target) <= tol:
            return hi, history
    found, lo, hi = bisect(lo, hi, cfg.K, cfg.tune_runs)
    if found is not None:
        return found, history
    log.warning("lam tuning missed target sparsity %.3f (last %.3f)", target, history[-1][2])
    return hi, history
