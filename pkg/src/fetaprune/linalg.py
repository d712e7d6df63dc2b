"""Dense linear algebra and spectral utilities.

Matrices are plain 2-D ``numpy.ndarray`` objects in float64. Random streams
come from :func:`make_rng`, a Philox (counter-based) generator, so a given
seed produces the same sequence on every platform numpy supports.
"""
from typing import NamedTuple

import numpy as np

from . import kernels


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


def make_rng(seed=0):
    """Seeded Philox-4x64 generator wrapped in ``numpy.random.Generator``."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def as_matrix(X, name="matrix"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {X.shape}")
    return X


def matmul(X, Y):
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[0]:
        raise ParameterError(f"cannot multiply {X.shape} by {Y.shape}")
    return X @ Y


def relu(X):
    return np.maximum(np.asarray(X, dtype=np.float64), 0.0)


def _check_theta(theta):
    if not theta > 0:
        raise ParameterError(f"theta must be positive, got {theta}")


def softplus(X, theta):
    """Smoothed rectifier (1/theta) log(1 + exp(theta x)).

    For |theta x| > 30 the result is x or 0 exactly.
    """
    _check_theta(theta)
    return kernels.softplus(X, theta)


def softplus_grad(X, theta):
    """Derivative of :func:`softplus`: the logistic sigmoid of theta x."""
    _check_theta(theta)
    return kernels.sigmoid(X, theta)


def frobenius(X):
    X = np.asarray(X, dtype=np.float64)
    return float(np.sqrt(np.sum(X * X)))


def l2_col_norms(X):
    X = as_matrix(X)
    return np.sqrt(np.sum(X * X, axis=0))


def spectral_norm(X, tol=1e-9, max_iter=1000, rng=None):
    """Largest singular value by power iteration on X^T X.

    Stops when the relative change of the Rayleigh quotient drops below
    ``tol``. A zero matrix gives 0.
    """
    X = as_matrix(X)
    if X.size == 0:
        raise ParameterError("spectral_norm of an empty matrix")
    if not np.any(X):
        return 0.0
    rng = make_rng(0) if rng is None else rng
    v = rng.standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    rq_old = 0.0
    rq = 0.0
    for _ in range(max_iter):
        w = X @ v
        rq = float(w @ w)
        z = X.T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            # start vector in the null space; rq is 0 only if X v = 0
            v = rng.standard_normal(X.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = z / nz
        if abs(rq - rq_old) <= tol * rq:
            break
        rq_old = rq
    # rq at the final normalised iterate
    w = X @ v
    return float(np.sqrt(max(rq, float(w @ w))))


class PCA(NamedTuple):
    components: np.ndarray  # d x k, orthonormal columns
    reconstruction: np.ndarray  # d x n, rank-k approximation plus the mean
    eigenvalues: np.ndarray  # k leading covariance eigenvalues
    explained_variance_ratio: np.ndarray  # per component
    mean: np.ndarray  # d


def _top_eigvec(C, basis, rng, tol, max_iter, scale):
    d = C.shape[0]
    v = rng.standard_normal(d)
    if basis:
        Q = np.column_stack(basis)
        v -= Q @ (Q.T @ v)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = C @ v
        if basis:
            w -= Q @ (Q.T @ w)
        lam = float(v @ w)
        # residual, not eigenvalue change: the Rayleigh quotient converges
        # quadratically faster than the direction itself
        if np.linalg.norm(w - lam * v) <= tol * scale:
            break
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            break
        v = w / nw
    if basis:
        # one more Gram-Schmidt pass keeps orthonormality at machine level
        v -= Q @ (Q.T @ v)
        v /= np.linalg.norm(v)
    return v, float(v @ (C @ v))


def pca_project(X, k, tol=1e-12, max_iter=20000, rng=None):
    """Top-k principal directions of column samples and the rank-k data.

    Parameters
    ----------
    X : (d, n) array
        One sample per column.
    k : int
        Number of components, ``1 <= k <= min(d, n)``.

    Returns
    -------
    PCA
        ``components`` holds the directions as columns; ``reconstruction``
        is the data projected onto them and mapped back to the original
        coordinates (mean restored), so it has the shape of ``X``.

    Notes
    -----
    Eigenpairs of the sample covariance are found one at a time by power
    iteration, deflating against the directions already found. Iteration
    stops when the eigen-residual ``|Cv - lam v|`` drops below ``tol`` times
    the total variance.
    """
    X = as_matrix(X)
    d, n = X.shape
    if not 1 <= k <= min(d, n):
        raise ParameterError(f"k={k} outside [1, {min(d, n)}] for data of shape {X.shape}")
    rng = make_rng(0) if rng is None else rng
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    C = (Xc @ Xc.T) / n
    scale = max(float(np.trace(C)), 1e-300)
    basis = []
    lams = []
    for _ in range(k):
        v, lam = _top_eigvec(C, basis, rng, tol, max_iter, scale)
        basis.append(v)
        lams.append(lam)
    V = np.column_stack(basis)
    recon = V @ (V.T @ Xc) + mean[:, None]
    total = float(np.trace(C))
    lams = np.asarray(lams)
    ratio = lams / total if total > 0 else np.zeros_like(lams)
    return PCA(V, recon, lams, ratio, mean)
