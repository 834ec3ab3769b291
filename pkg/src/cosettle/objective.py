"""Training losses (cycle consistency, KL regularizer) and the analytic surrogates.

Grids are ``(N, d)`` arrays of projected tokens. Every loss returns its value
together with gradients with respect to the projected grids; the trainer
pushes those through :func:`cosettle.projection.project_backward`.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import log_softmax_rows, softmax_rows
from .projection import core_jacobian, project_forward

LOG_FLOOR = 1e-30


@dataclass(frozen=True)
class CorrelationPair:
    """Forward ``A(t1 -> t2)`` and backward ``A~(t2 -> t1)`` transition matrices."""

    forward: np.ndarray
    backward: np.ndarray

    def __post_init__(self):
        if self.forward.shape != self.backward.shape or self.forward.shape[0] != self.forward.shape[1]:
            raise ShapeError(f"transition matrices must be square and equal in shape, got "
                             f"{self.forward.shape} and {self.backward.shape}")

    def chain(self):
        return self.forward @ self.backward


@dataclass(frozen=True)
class LossReport:
    cyc: float
    reg: float
    total: float
    lam: float
    clamped: int = 0


@dataclass
class CycleLossResult:
    value: float
    grad_forward: np.ndarray
    grad_intermediate: np.ndarray
    grad_backward: np.ndarray
    pair: CorrelationPair
    clamped: int = 0


def _check_pair_shapes(a, b):
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"grids must share shape (N, d), got {a.shape} and {b.shape}")


def correlation_matrix(p_a, p_b, temperature):
    """Transition matrix ``softmax_rows(p_a @ p_b.T / temperature)``."""
    p_a = np.asarray(p_a, dtype=np.float64)
    p_b = np.asarray(p_b, dtype=np.float64)
    _check_pair_shapes(p_a, p_b)
    return softmax_rows(p_a @ p_b.T, temperature)


def chain_loss(pair, reduction="mean"):
    """Cross-entropy of the two-step chain against the identity.

    Returns ``(value, d_forward, d_backward, clamped)`` where the gradients are
    with respect to the transition matrices themselves. Diagonal entries below
    ``LOG_FLOOR`` are clamped (and contribute no gradient); ``clamped`` counts them.
    """
    a, b = pair.forward, pair.backward
    n = a.shape[0]
    diag = np.einsum("ij,ji->i", a, b)
    low = diag < LOG_FLOOR
    safe = np.where(low, LOG_FLOOR, diag)
    scale = 1.0 / n if reduction == "mean" else 1.0
    if reduction not in ("mean", "sum"):
        raise ParameterError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    value = -scale * float(np.sum(np.log(safe)))
    g = np.where(low, 0.0, -scale / safe)
    d_forward = g[:, None] * b.T
    d_backward = a.T * g[None, :]
    return value, d_forward, d_backward, int(low.sum())


def _softmax_backward(probs, d_probs, temperature):
    inner = np.sum(d_probs * probs, axis=1, keepdims=True)
    return probs * (d_probs - inner) / temperature


def cycle_loss(p_forward, p_intermediate, p_backward, temperature, reduction="mean"):
    """Palindrome cycle loss ``-(1/N) sum_i log (A A~)_ii`` with gradients for all three grids.

    ``reduction="sum"`` drops the ``1/N`` factor.
    """
    pf = np.asarray(p_forward, dtype=np.float64)
    pm = np.asarray(p_intermediate, dtype=np.float64)
    pb = np.asarray(p_backward, dtype=np.float64)
    _check_pair_shapes(pf, pm)
    _check_pair_shapes(pm, pb)
    a = softmax_rows(pf @ pm.T, temperature)
    b = softmax_rows(pm @ pb.T, temperature)
    pair = CorrelationPair(a, b)
    value, da, db, clamped = chain_loss(pair, reduction)
    ds1 = _softmax_backward(a, da, temperature)
    ds2 = _softmax_backward(b, db, temperature)
    return CycleLossResult(
        value=value,
        grad_forward=ds1 @ pm,
        grad_intermediate=ds1.T @ pf + ds2 @ pb,
        grad_backward=ds2.T @ pm,
        pair=pair,
        clamped=clamped,
    )


def token_kl(p, z):
    """Per-token ``KL(softmax(p) || softmax(z))`` over the feature axis, and its gradient in ``p``."""
    log_p = log_softmax_rows(p)
    log_z = log_softmax_rows(z)
    probs = np.exp(log_p)
    kl = np.sum(probs * (log_p - log_z), axis=-1)
    grad = probs * (log_p - log_z - kl[..., None])
    return kl, grad


def kl_regularizer(set_s):
    """Mean over pairs of the token-averaged KL divergence; ``z`` is held constant.

    ``set_s`` is a sequence of ``(p, z)`` grid pairs. Returns ``(value, grads)``
    with one gradient array per ``p``.
    """
    set_s = list(set_s)
    if not set_s:
        raise ParameterError("kl_regularizer needs at least one (p, z) pair")
    total = 0.0
    grads = []
    for p, z in set_s:
        p = np.asarray(p, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if p.shape != z.shape or p.ndim != 2:
            raise ShapeError(f"p and z must share shape (N, d), got {p.shape} and {z.shape}")
        kl, g = token_kl(p, z)
        n = p.shape[0]
        total += kl.mean()
        grads.append(g / (n * len(set_s)))
    return total / len(set_s), grads


@dataclass
class TotalLossResult:
    report: LossReport
    grad_forward: np.ndarray
    grad_intermediate: np.ndarray
    grad_backward: np.ndarray
    pair: CorrelationPair


def total_loss(projected, raw, lam, temperature, reduction="mean"):
    """``cyc + lam * reg`` for one palindrome.

    Args:
        projected: ``(p_forward, p_intermediate, p_backward)`` projected grids.
        raw: ``(z_forward, z_intermediate, z_backward)`` encoder-side grids the
            regularizer compares against, in the same order.
        lam: regularizer weight, ``>= 0``.
    """
    if not lam >= 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    pf, pm, pb = projected
    cyc = cycle_loss(pf, pm, pb, temperature, reduction)
    reg, (gf, gm, gb) = kl_regularizer(zip(projected, raw))
    report = LossReport(cyc=cyc.value, reg=reg, total=cyc.value + lam * reg, lam=lam, clamped=cyc.clamped)
    return TotalLossResult(
        report=report,
        grad_forward=cyc.grad_forward + lam * gf,
        grad_intermediate=cyc.grad_intermediate + lam * gm,
        grad_backward=cyc.grad_backward + lam * gb,
        pair=cyc.pair,
    )


# --- analytic surrogates ------------------------------------------------------


def _apply(g, z):
    if callable(g):
        return np.asarray(g(z), dtype=np.float64)
    out, _ = project_forward(g, z)
    return out


def surrogate_m_cyc(g, z1, z2):
    """Monte-Carlo ``1/2 E ||g(z1) - g(z2)||^2`` over paired rows of ``z1`` and ``z2``.

    ``g`` is a callable on ``(K, d)`` arrays or a projection parameter object.
    """
    z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    z2 = np.atleast_2d(np.asarray(z2, dtype=np.float64))
    if z1.shape != z2.shape or z1.shape[0] < 1:
        raise ShapeError(f"need matching non-empty sample arrays, got {z1.shape} and {z2.shape}")
    diff = _apply(g, z1) - _apply(g, z2)
    return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))


def surrogate_m_reg(params, points=None):
    """Jacobian-orthogonality penalty ``1/2 E ||J J^T - I||_F^2`` of the pre-LayerNorm map.

    Exact for the linear head; for the MLP it averages over ``points``.
    """
    d = params.dim
    eye = np.eye(d)
    if params.variant == "linear":
        w = params.weight
        return 0.5 * float(np.sum((w @ w.T - eye) ** 2))
    if points is None:
        raise ParameterError("the MLP surrogate needs evaluation points")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vals = []
    for z in pts:
        j = core_jacobian(params, z)
        vals.append(0.5 * np.sum((j @ j.T - eye) ** 2))
    return float(np.mean(vals))
