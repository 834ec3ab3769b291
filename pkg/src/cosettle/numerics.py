"""Dense linear-algebra and probability kernels used throughout the package.

Everything works on float64 numpy arrays. Functions never modify their inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericError, ParameterError, ShapeError

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


def as_matrix(m, name="matrix"):
    """Return ``m`` as a finite 2-D float64 array (copying only if needed)."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def softmax_rows(m, temperature=1.0):
    """Row-wise softmax of ``m / temperature``.

    Uses max-subtraction, so large logits do not overflow.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    a = as_matrix(m) / temperature
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(m):
    a = np.asarray(m, dtype=np.float64)
    a = a - a.max(axis=-1, keepdims=True)
    return a - np.log(np.exp(a).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class SymEigResult:
    """Eigen-decomposition ``S = basis @ diag(eigenvalues) @ basis.T``.

    Eigenvalues ascend; column ``k`` of ``basis`` pairs with ``eigenvalues[k]``.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    sweeps: int = 0

    def reconstruct(self):
        return (self.basis * self.eigenvalues) @ self.basis.T


def _off_norm(a):
    # summed directly; ||a||^2 - ||diag||^2 cancels badly for nearly diagonal a
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eig(s, max_sweeps=JACOBI_MAX_SWEEPS, tol=JACOBI_TOL):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as ``(s + s.T) / 2`` after checking that its
    asymmetry is at most ``1e-9 * ||s||_F``. Sweeps stop once the off-diagonal
    Frobenius norm drops to ``tol * ||s||_F``.

    Each eigenvector column is signed so that its largest-magnitude entry is
    positive, which makes the output deterministic.

    Raises:
        ShapeError: ``s`` is not square.
        InvalidInputError: ``s`` is not symmetric.
        NumericError: not converged within ``max_sweeps`` sweeps.
    """
    a = as_matrix(s, "s")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > 1e-9 * scale:
        raise InvalidInputError("sym_eig input is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * scale

    sweeps = 0
    while _off_norm(a) > threshold:
        if sweeps >= max_sweeps:
            raise NumericError(
                f"Jacobi did not converge in {max_sweeps} sweeps",
                residual=_off_norm(a),
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                # an infinite theta means a negligible apq: t -> 0, no rotation
                t = 0.0 if np.isinf(theta) else np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                sn = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[lead, np.arange(n)])
    signs[signs == 0] = 1.0
    return SymEigResult(eigenvalues=w, basis=v * signs, sweeps=sweeps)


def covariance_of_differences(pairs):
    """Second moment ``(1/K) sum_k (a_k - b_k)(a_k - b_k)^T`` of paired vectors.

    ``pairs`` is either a sequence of ``(a, b)`` vector tuples or a pair of
    ``(K, d)`` arrays. The result is exactly symmetric.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        a = np.asarray(pairs[0], dtype=np.float64)
        b = np.asarray(pairs[1], dtype=np.float64)
    else:
        pairs = list(pairs)
        if not pairs:
            raise ParameterError("covariance_of_differences needs at least one pair")
        dims = {np.shape(x) for pair in pairs for x in pair}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ShapeError(f"all vectors must share one dimension, got {sorted(dims)}")
        a = np.array([p[0] for p in pairs], dtype=np.float64)
        b = np.array([p[1] for p in pairs], dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"pair arrays differ in shape: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise ParameterError("covariance_of_differences needs at least one pair")
    diff = a - b
    cov = diff.T @ diff / diff.shape[0]
    return 0.5 * (cov + cov.T)
