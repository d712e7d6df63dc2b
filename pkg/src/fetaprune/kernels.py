"""Backend selection for the elementwise hot loops.

The compiled ``_ckernels`` extension is preferred; when it is not built the
numpy implementation in ``_pykernels`` is used instead. Set the environment
variable ``FETAPRUNE_BACKEND`` to ``python`` or ``cython`` to force one
(``cython`` raises ImportError if the extension is missing).

Every wrapper accepts arrays of any float dtype/layout and hands the backend
C-contiguous float64 2-D arrays.
"""
import os

import numpy as np

from . import _pykernels

_requested = os.environ.get("FETAPRUNE_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pykernels
        BACKEND = "python"


def available_backends():
    """Names of the kernel modules importable in this build."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _c2(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        x = np.atleast_2d(x)
    return np.ascontiguousarray(x)


def _shaped(fn, x, *args):
    x = np.asarray(x, dtype=np.float64)
    out = fn(_c2(x.reshape(1, -1) if x.ndim != 2 else x), *args)
    return out.reshape(x.shape)


def softplus(x, theta):
    return _shaped(_impl.softplus, x, float(theta))


def sigmoid(x, theta):
    return _shaped(_impl.sigmoid, x, float(theta))


def sq_grad_factor(z, theta):
    return _impl.sq_grad_factor(_c2(z), float(theta))


def cross_grad_factor(z, b, theta):
    return _impl.cross_grad_factor(_c2(z), _c2(b), float(theta))


def dc_sums(z, b, theta):
    return _impl.dc_sums(_c2(z), _c2(b), float(theta))


def soft_threshold(v, tau, n_pen=None):
    v = _c2(v)
    n_pen = v.shape[0] if n_pen is None else int(n_pen)
    return _impl.soft_threshold(v, float(tau), n_pen)


def prox_momentum_step(y, u, x_prev, eta, tau, beta, n_pen):
    return _impl.prox_momentum_step(
        _c2(y), _c2(u), _c2(x_prev), float(eta), float(tau), float(beta), int(n_pen)
    )
