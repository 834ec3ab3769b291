"""Finite-difference check of every analytic gradient, end to end through the head.

For random small instances the cycle loss, the KL regularizer and their sum
are differentiated with respect to each projection parameter, analytically
and by central differences, for both head variants.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .objective import cycle_loss, kl_regularizer
from .projection import init_projection, param_arrays, project_backward, project_forward, with_arrays

LOSSES = ("cyc", "kl", "total")
VARIANTS = ("linear", "mlp")


def _losses(params, raws, lam, temperature, reduction):
    outs = [project_forward(params, x) for x in raws]
    projected = [o for o, _ in outs]
    cyc = cycle_loss(*projected, temperature, reduction)
    reg, reg_grads = kl_regularizer(zip(projected, raws))
    return outs, cyc, reg, reg_grads


def loss_values(params, raws, lam, temperature, reduction="mean"):
    _, cyc, reg, _ = _losses(params, raws, lam, temperature, reduction)
    return {"cyc": cyc.value, "kl": reg, "total": cyc.value + lam * reg}


def analytic_gradients(params, raws, lam, temperature, reduction="mean"):
    """``{loss: {param_name: gradient}}`` for the three losses."""
    outs, cyc, _, reg_grads = _losses(params, raws, lam, temperature, reduction)
    ups = {
        "cyc": (cyc.grad_forward, cyc.grad_intermediate, cyc.grad_backward),
        "kl": tuple(reg_grads),
    }
    ups["total"] = tuple(c + lam * k for c, k in zip(ups["cyc"], ups["kl"]))
    result = {}
    for name, upstream in ups.items():
        acc = {k: np.zeros_like(v) for k, v in param_arrays(params).items()}
        for (_, cache), up in zip(outs, upstream):
            for k, g in project_backward(params, cache, up).params.items():
                acc[k] += g
        result[name] = acc
    return result


def numeric_gradients(params, raws, lam, temperature, reduction="mean", step=1e-5):
    """Central differences ``(f(x + h) - f(x - h)) / 2h`` of all three losses."""
    arrays = {k: v.copy() for k, v in param_arrays(params).items()}
    result = {name: {k: np.zeros_like(v) for k, v in arrays.items()} for name in LOSSES}
    for key, arr in arrays.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus = loss_values(with_arrays(params, {key: arr.copy()}), raws, lam, temperature, reduction)
            arr[idx] = orig - step
            minus = loss_values(with_arrays(params, {key: arr.copy()}), raws, lam, temperature, reduction)
            arr[idx] = orig
            for name in LOSSES:
                result[name][key][idx] = (plus[name] - minus[name]) / (2.0 * step)
    return result


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)`` over all parameters jointly (0 when both vanish)."""
    a = np.concatenate([v.ravel() for v in analytic.values()])
    n = np.concatenate([numeric[k].ravel() for k in analytic])
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - n) / scale)


@dataclass
class Instance:
    params: object
    raws: tuple
    lam: float
    temperature: float


def random_instance(variant, rng, max_dim=8, max_tokens=8):
    """A random palindrome with ``3 <= d <= max_dim`` and ``2 <= N <= max_tokens``.

    Temperatures are drawn from ``[0.5, 2]``: at very sharp temperatures the
    softmax saturates and a finite-difference step of 1e-5 no longer resolves
    the gradient in 64-bit arithmetic.
    """
    d = int(rng.integers(3, max_dim + 1))
    n = int(rng.integers(2, max_tokens + 1))
    params = init_projection(variant, d, rng, init_std=0.3)
    params = with_arrays(params, {
        "ln_gain": 1.0 + 0.2 * rng.standard_normal(d),
        "ln_bias": 0.2 * rng.standard_normal(d),
    })
    base = rng.standard_normal((n, d))
    raws = (base, rng.standard_normal((n, d)), base + 0.3 * rng.standard_normal((n, d)))
    return Instance(params, raws, float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.5, 2.0)))


@dataclass
class GradcheckResult:
    variant: str
    loss: str
    instance: int
    rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    tolerance: float
    step: float
    results: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    @property
    def max_error(self):
        return max((r.rel_error for r in self.results), default=0.0)

    def worst(self):
        """Largest relative error per ``(variant, loss)``."""
        out = {}
        for r in self.results:
            key = f"{r.variant}/{r.loss}"
            out[key] = max(out.get(key, 0.0), r.rel_error)
        return out

    def to_dict(self):
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "step": self.step,
            "max_error": self.max_error,
            "worst": self.worst(),
            "checks": len(self.results),
            "failures": [asdict(r) for r in self.results if not r.passed],
        }


def run_gradcheck(instances=100, seed=0, step=1e-5, tol=1e-6, max_dim=8, max_tokens=8, variants=VARIANTS):
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tol, step=step)
    for variant in variants:
        for i in range(instances):
            inst = random_instance(variant, rng, max_dim, max_tokens)
            ana = analytic_gradients(inst.params, inst.raws, inst.lam, inst.temperature)
            num = numeric_gradients(inst.params, inst.raws, inst.lam, inst.temperature, step=step)
            for name in LOSSES:
                err = relative_error(ana[name], num[name])
                report.results.append(GradcheckResult(variant, name, i, err, err <= tol))
    return report
