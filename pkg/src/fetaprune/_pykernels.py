"""Pure-numpy elementwise kernels.

Reference implementation of the hot loops used by the pruner. The compiled
module ``_ckernels`` exposes the same functions with the same signatures;
``fetaprune.kernels`` picks one at import time.

All inputs are 2-D float64 arrays. ``n_pen`` arguments restrict the l1
penalty to the first ``n_pen`` rows (the remaining rows hold unpenalized
bias terms).
"""
import numpy as np

CUTOFF = 30.0


def softplus(x, theta):
    t = theta * x
    with np.errstate(over="ignore"):
        out = np.log1p(np.exp(np.clip(t, -CUTOFF, CUTOFF))) / theta
    out = np.where(t > CUTOFF, x, out)
    out[t < -CUTOFF] = 0.0
    return out


def sigmoid(x, theta):
    t = theta * x
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sq_grad_factor(z, theta):
    """Elementwise derivative of softplus(z)**2, i.e. 2 * softplus * sigmoid."""
    return 2.0 * softplus(z, theta) * sigmoid(z, theta)


def cross_grad_factor(z, b, theta):
    """Elementwise 2 * b * sigmoid(theta z), restricted to b > 0."""
    return np.where(b > 0, 2.0 * b * sigmoid(z, theta), 0.0)


def dc_sums(z, b, theta):
    """Return (g, h) summed over all entries."""
    sp = softplus(z, theta)
    g = float(np.sum(sp * sp) + np.sum(b * b))
    h = float(np.sum(np.where(b > 0, 2.0 * b * sp, 0.0)))
    return g, h


def soft_threshold(v, tau, n_pen):
    out = np.array(v, dtype=np.float64, copy=True)
    head = out[:n_pen]
    out[:n_pen] = np.sign(head) * np.maximum(np.abs(head) - tau, 0.0)
    return out


def prox_momentum_step(y, u, x_prev, eta, tau, beta, n_pen):
    """One proximal-gradient step with momentum extrapolation.

    x = prox_{tau |.|}(y - eta u) on the penalized rows, plain step elsewhere;
    y_next = x + beta (x - x_prev).
    """
    x = soft_threshold(y - eta * u, tau, n_pen)
    y_next = x + beta * (x - x_prev)
    return x, y_next
