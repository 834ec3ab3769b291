"""Spectral analysis of the linear surrogate objective.

For a linear head ``W`` commuting with the temporal-difference covariance
``Sigma`` (eigenvalues ``sigma_i``) the surrogate

    M(W) = 1/2 Tr(W^T W Sigma) + lam/2 ||W W^T - I||_F^2

separates into per-eigenvalue terms ``h(mu) = 1/2 mu^2 sigma + lam/2 (mu^4 - 2 mu^2)``
(constants dropped). Its minimizer soft-thresholds the spectrum:
``mu* = sqrt(max(0, 1 - sigma / (2 lam)))``. Directions that change a lot over
time are shrunk or removed, directions that are stable are kept.

The margin change uses unnormalized expected squared distances with unit
weight on the intra term: ``Delta = sum_i (mu_i^2 - 1)(tau_i - sigma_i)``,
where ``tau_i`` are eigenvalues of the covariance of video-mean differences.
When every ``tau_i`` equals ``tau_bar = mean(sigma)`` this reduces to
``sum_{sigma_i <= 2 lam} (tau_bar - sigma_i)(1 - sigma_i / (2 lam))``. These are
not the radius-normalized quantities of :mod:`cosettle.metrics`.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import SyntheticModelSpec, video_mean_difference_cov
from .errors import NumericError, ParameterError
from .numerics import sym_eig

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
MIN_EMPIRICAL_SAMPLES = 1000


def _check_lam(lam):
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")


def _as_sigma(sigma):
    s = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if s.ndim != 1 or s.size == 0 or not np.all(np.isfinite(s)):
        raise ParameterError("sigma must be a non-empty finite vector")
    if np.any(s < 0):
        raise ParameterError("sigma entries must be non-negative")
    return s


def optimal_eigs_closed_form(sigma, lam):
    """Soft-thresholded optimum ``sqrt(max(0, 1 - sigma / (2 lam)))``."""
    _check_lam(lam)
    s = _as_sigma(sigma)
    return np.sqrt(np.maximum(0.0, 1.0 - s / (2.0 * lam)))


def per_eig_objective(mu, sigma, lam):
    mu = np.asarray(mu, dtype=np.float64)
    mu2 = mu * mu
    return 0.5 * mu2 * sigma + 0.5 * lam * (mu2 * mu2 - 2.0 * mu2)


def per_eig_gradient(mu, sigma, lam):
    mu = np.asarray(mu, dtype=np.float64)
    return mu * sigma + 2.0 * lam * mu**3 - 2.0 * lam * mu


def lemma1_gradient_terms(mu, sigma, lam):
    """Split ``dh/dmu`` into the consistency part ``mu sigma`` and the separability part ``2 lam mu (mu^2 - 1)``.

    For ``0 < mu < 1`` the first is positive whenever ``sigma > 0`` and the
    second is negative whenever ``lam > 0``: the two terms pull ``mu`` in
    opposite directions.
    """
    mu = np.asarray(mu, dtype=np.float64)
    return mu * sigma, 2.0 * lam * mu**3 - 2.0 * lam * mu


def _minimize_scalar(sigma, lam, mu0=0.5):
    # h'(mu) = mu * q(mu) with q(mu) = sigma - 2 lam + 2 lam mu^2 increasing on mu > 0,
    # so the minimizer over mu >= 0 is 0 when q(0) >= 0 and the root of q otherwise.
    if sigma >= 2.0 * lam:
        return 0.0, 0
    lo, hi = 0.0, 1.0  # q(0) < 0 <= q(1) = sigma
    mu = mu0
    for it in range(1, NEWTON_MAX_ITER + 1):
        g = per_eig_gradient(mu, sigma, lam)
        if abs(g) <= NEWTON_TOL:
            return float(mu), it
        q = sigma - 2.0 * lam + 2.0 * lam * mu * mu
        if q < 0:
            lo = mu
        else:
            hi = mu
        step = mu - q / (4.0 * lam * mu) if mu > 0 else -1.0
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    raise NumericError(
        f"scalar minimization did not converge for sigma={sigma}, lambda={lam}",
        residual=float(abs(per_eig_gradient(mu, sigma, lam))),
        step=NEWTON_MAX_ITER,
    )


def random_orthogonal(dim, rng):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def moment_matched_samples(cov_sqrt, samples, rng):
    """``(samples, d)`` draws whose second-moment matrix equals ``cov_sqrt @ cov_sqrt.T`` exactly.

    Standard normals are whitened against their own second moment before
    being coloured, which removes sampling error from quadratic forms.
    """
    d = cov_sqrt.shape[0]
    g = rng.standard_normal((samples, d))
    eig = sym_eig(g.T @ g / samples)
    whiten = eig.basis @ np.diag(eig.eigenvalues**-0.5) @ eig.basis.T
    return g @ whiten @ cov_sqrt.T


def _full_matrix_objective(sigma_hat, lam):
    d = sigma_hat.shape[0]
    eye = np.eye(d)

    def fun(flat):
        a = flat.reshape(d, d)
        w = 0.5 * (a + a.T)
        ws = w @ sigma_hat
        gram = w @ w.T - eye
        value = 0.5 * np.sum(w * ws) + 0.5 * lam * np.sum(gram * gram)
        gw = ws + 2.0 * lam * gram @ w
        ga = 0.5 * (gw + gw.T)
        return value, ga.ravel()

    return fun


@dataclass
class SurrogateFit:
    mu_hat: np.ndarray
    objective: float
    iterations: int
    residual: float
    restarts: int = 1


def optimize_surrogate_linear(
    sigma, lam, mode="eigenbasis", *, basis=None, samples=20000, restarts=10, seed=0
):
    """Numerically minimize the linear surrogate; returns a :class:`SurrogateFit`.

    ``mode="eigenbasis"`` solves each scalar problem from ``mu = 0.5`` until
    ``|h'(mu)| <= 1e-10``. ``mode="full"`` builds ``Sigma = U diag(sigma) U^T``
    (``U`` random orthogonal unless ``basis`` is given), estimates the
    consistency term from moment-matched samples of ``z1 - z2``, and runs
    L-BFGS over symmetric ``W`` from ``restarts`` starts (identity, then random
    positive definite matrices), keeping the best. ``mu_hat`` is aligned to ``sigma``: the ``k``-th smallest ``sigma``
    gets the ``k``-th largest ``|eigenvalue|`` of ``W`` (``mu*`` is
    non-increasing in ``sigma``, and ``W`` and ``-W`` score the same).
    """
    _check_lam(lam)
    s = _as_sigma(sigma)
    if mode == "eigenbasis":
        mus, iters, res = [], 0, 0.0
        for si in s:
            mu, it = _minimize_scalar(float(si), lam)
            mus.append(mu)
            iters = max(iters, it)
            res = max(res, abs(float(per_eig_gradient(mu, si, lam))))
        mus = np.array(mus)
        return SurrogateFit(mus, float(np.sum(per_eig_objective(mus, s, lam))), iters, res)
    if mode != "full":
        raise ParameterError(f"mode must be 'eigenbasis' or 'full', got {mode!r}")
    if samples < s.size:
        raise ParameterError("need at least d samples for the full-matrix mode")
    d = s.size
    rng = np.random.default_rng(seed)
    u = random_orthogonal(d, rng) if basis is None else np.asarray(basis, dtype=np.float64)
    diffs = moment_matched_samples(u * np.sqrt(s), samples, rng)
    sigma_hat = diffs.T @ diffs / samples
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    fun = _full_matrix_objective(sigma_hat, lam)
    best = None
    for r in range(restarts):
        # PSD starts in random bases; indefinite starts must drag eigenvalues
        # through the flat region around 0 and take ~30x more iterations
        if r == 0:
            a0 = np.eye(d)
        else:
            q = random_orthogonal(d, rng)
            a0 = (q * rng.uniform(0.25, 1.5, d)) @ q.T
        out = minimize(fun, a0.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": 5000, "gtol": 1e-13, "ftol": 1e-16})
        if best is None or out.fun < best.fun:
            best = out
    a = best.x.reshape(d, d)
    w = 0.5 * (a + a.T)
    grad_norm = float(np.linalg.norm(fun(best.x)[1]))
    if grad_norm > 1e-6:
        raise NumericError("full-matrix descent did not converge", residual=grad_norm, step=int(best.nit))
    eig = np.sort(np.abs(sym_eig(w).eigenvalues))[::-1]
    mu_hat = np.empty(d)
    mu_hat[np.argsort(s, kind="stable")] = eig
    return SurrogateFit(mu_hat, float(best.fun), int(best.nit), grad_norm, restarts)


@dataclass(frozen=True)
class DeltaReport:
    delta: float
    tau_bar: float
    positivity_condition: bool


def delta_margin_closed_form(sigma, lam):
    """Margin change at the optimum, with ``tau_bar = mean(sigma)`` for every inter eigenvalue.

    ``positivity_condition`` is ``lam < tau_bar / 2``; when it holds every
    contributing term is non-negative.
    """
    _check_lam(lam)
    s = _as_sigma(sigma)
    tau = float(s.mean())
    keep = s <= 2.0 * lam
    delta = float(np.sum((tau - s[keep]) * (1.0 - s[keep] / (2.0 * lam))))
    return DeltaReport(delta, tau, lam < tau / 2.0)


def spectral_corpus_spec(sigma, n_h=4, n_w=4, frames_per_video=8, videos=2, basis=None, seed=0):
    """A :class:`SyntheticModelSpec` whose video-mean differences have covariance ``mean(sigma) I``.

    ``Sigma = U diag(sigma) U^T``; the per-video covariance is solved from the
    closed form of the video-mean difference covariance.
    """
    s = _as_sigma(sigma)
    d = s.size
    u = np.eye(d) if basis is None else np.asarray(basis, dtype=np.float64)
    n, t = n_h * n_w, frames_per_video
    inter_eigs = (0.5 * s.mean() - s / (2.0 * n * t)) / (1.0 + 1.0 / n)
    if np.any(inter_eigs < 0):
        raise ParameterError("no valid inter-video covariance: increase patches or frames")
    intra = (u * s) @ u.T
    inter = (u * inter_eigs) @ u.T
    return SyntheticModelSpec(
        dim=d, n_h=n_h, n_w=n_w, frames_per_video=t, videos=videos,
        intra_cov=0.5 * (intra + intra.T), inter_cov=0.5 * (inter + inter.T), seed=seed,
    )


def delta_margin_empirical(spec, lam, samples=100_000, seed=None):
    """Monte-Carlo margin change of the closed-form optimal head on ``spec``.

    Intra pairs ``z1 - z2`` are drawn from ``N(0, Sigma)`` and video-mean
    differences from their closed-form covariance. Both use the same standard
    normal draws in ``Sigma``'s eigenbasis (common random numbers), so the
    estimate is exactly zero when the two spectra coincide. Returns
    ``(E||W dInter||^2 - E||W dIntra||^2) - (E||dInter||^2 - E||dIntra||^2)``.
    """
    _check_lam(lam)
    if samples < MIN_EMPIRICAL_SAMPLES:
        raise ParameterError(f"need at least {MIN_EMPIRICAL_SAMPLES} samples, got {samples}")
    eig = sym_eig(spec.intra_cov)
    u, s = eig.basis, np.maximum(eig.eigenvalues, 0.0)
    inter_rot = u.T @ video_mean_difference_cov(spec) @ u
    off = inter_rot - np.diag(np.diag(inter_rot))
    if np.linalg.norm(off) > 1e-8 * max(1.0, np.linalg.norm(inter_rot)):
        raise ParameterError("intra and inter covariances do not commute")
    tau = np.maximum(np.diag(inter_rot), 0.0)
    mu = optimal_eigs_closed_form(s, lam)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    g = rng.standard_normal((samples, s.size))
    g2 = g * g
    # in the eigenbasis, ||W x||^2 = sum_i mu_i^2 x_i^2
    inter_raw, intra_raw = g2 * tau, g2 * s
    after = np.mean(inter_raw @ (mu * mu)) - np.mean(intra_raw @ (mu * mu))
    before = np.mean(inter_raw.sum(axis=1)) - np.mean(intra_raw.sum(axis=1))
    return float(after - before)


@dataclass
class MlpProductReport:
    products: np.ndarray
    closed_form: np.ndarray
    max_error: float
    linearity_deviation: float
    iterations: int


def mlp_product_spectrum_check(sigma, lam, scale=0.01, samples=2000, seed=0, max_iter=100, tol=1e-14):
    """Minimize the simplified two-layer surrogate per coordinate and compare ``mu1 * mu2`` to ``mu*``.

    Per coordinate ``f = 1/2 a b sigma + lam/2 (a b - 1)^2`` with ``a = mu1^2``,
    ``b = mu2^2``. Each block is an exact convex minimization, alternated
    until the gradient norm falls below ``tol``. Only the product is
    identified; the factors depend on the start.

    ``scale`` shrinks the first layer (and grows the second) to check that
    the tanh layer stays within 1% of linear on samples from ``N(0, diag(sigma))``.
    """
    _check_lam(lam)
    s = _as_sigma(sigma)
    a = np.ones_like(s)
    b = np.ones_like(s)
    target = np.maximum(0.0, 1.0 - s / (2.0 * lam))

    def grads(a, b):
        r = a * b - 1.0
        return 0.5 * b * s + lam * b * r, 0.5 * a * s + lam * a * r

    for it in range(1, max_iter + 1):
        a = np.where(b > 0, np.maximum(0.0, target / np.where(b > 0, b, 1.0)), a)
        b = np.where(a > 0, np.maximum(0.0, target / np.where(a > 0, a, 1.0)), b)
        ga, gb = grads(a, b)
        # projected gradient: a zero block with a non-negative partial derivative is optimal
        ga = np.where((a == 0) & (ga >= 0), 0.0, ga)
        gb = np.where((b == 0) & (gb >= 0), 0.0, gb)
        if max(np.max(np.abs(ga)), np.max(np.abs(gb))) <= tol:
            break
    else:
        raise NumericError("alternating minimization did not converge", residual=float(np.max(np.abs(ga))), step=max_iter)

    products = np.sqrt(a) * np.sqrt(b)
    closed = optimal_eigs_closed_form(s, lam)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, s.size)) * np.sqrt(np.maximum(s, 1e-12))
    pre = z * (scale * np.sqrt(a))
    norm = np.linalg.norm(pre, axis=1)
    ok = norm > 0
    dev = np.linalg.norm(np.tanh(pre) - pre, axis=1)[ok] / norm[ok]
    deviation = float(dev.max()) if dev.size else 0.0
    if deviation > 0.01:
        raise ParameterError(f"first layer is not in its linear regime (deviation {deviation:.3g}); lower scale")
    return MlpProductReport(products, closed, float(np.max(np.abs(products - closed))), deviation, it)


@dataclass
class SpectralReport:
    sigma: list
    tau_bar: list
    lam: float
    mu_star: list
    mu_hat: list
    delta_closed: float
    delta_empirical: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "sigma": self.sigma, "tau_bar": self.tau_bar, "lambda": self.lam,
            "mu_star": self.mu_star, "mu_hat": self.mu_hat,
            "delta_closed": self.delta_closed, "delta_empirical": self.delta_empirical,
            "diagnostics": self.diagnostics,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def verify_spectrum(sigma, lam, mode="eigenbasis", samples=100_000, seed=0):
    """Closed form, numerical optimum and both margin changes for one spectrum."""
    s = _as_sigma(sigma)
    fit = optimize_surrogate_linear(s, lam, mode, seed=seed)
    closed = delta_margin_closed_form(s, lam)
    emp = delta_margin_empirical(spectral_corpus_spec(s, seed=seed), lam, samples)
    mu_star = optimal_eigs_closed_form(s, lam)
    return SpectralReport(
        sigma=s.tolist(),
        tau_bar=[closed.tau_bar] * s.size,
        lam=float(lam),
        mu_star=mu_star.tolist(),
        mu_hat=fit.mu_hat.tolist(),
        delta_closed=closed.delta,
        delta_empirical=emp,
        diagnostics={
            "mode": mode,
            "iterations": fit.iterations,
            "residual": fit.residual,
            "objective": fit.objective,
            "max_abs_error": float(np.max(np.abs(fit.mu_hat - mu_star))),
            "positivity_condition": closed.positivity_condition,
            "samples": samples,
        },
    )
