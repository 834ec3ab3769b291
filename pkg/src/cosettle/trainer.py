"""Self-supervised training loop for the projection head.

One step samples a batch of videos, builds a palindrome per video (frame
``t1`` forward, frame ``t2`` in the middle, frame ``t1`` again backward),
adds the plain positional grid to the forward and middle frames and a
PEA-augmented grid to the backward frame, and minimizes ``cyc + lam * reg``
with AdamW under a warmup-plus-cosine schedule.

The positional grid is added to the embeddings right before the head. A real
encoder injects it at its input; post-encoder addition is the only place this
library can reach, and it is the main modeling departure from a full
transfer-learning setup.
"""

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import apply_overrides, parse_kv_text
from .data import check_homogeneous, sample_pair
from .errors import NumericError, ParameterError
from .metrics import evaluate
from .objective import total_loss
from .optim import OptimizerState, adamw_step, lr_at
from .pea import pea_augment, sinusoidal_grid
from .projection import init_projection, param_arrays, project_backward, project_forward, with_arrays

__all__ = ["TrainConfig", "TrainHistory", "train", "lr_at", "adamw_step", "OptimizerState"]

log = logging.getLogger(__name__)

# config-file spellings that differ from the field name
KEY_ALIASES = {"lambda": "lam", "lr": "base_lr", "tau": "temperature"}


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    base_lr: float = 1e-4
    lr_scale_divisor: float = 256.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    warmup_epochs: int = 1
    temperature: float = 0.03
    delta: float = 0.15
    lam: float = 1.0
    alpha: float = 0.25
    seed: int = 0
    pos_scale: float = 1.0
    variant: str = "linear"
    eps_ln: float = 1e-6
    init_std: float = 0.02
    reduction: str = "mean"
    threads: int = 1
    eval_every_epoch: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if not self.lam >= 0:
            raise ParameterError(f"lambda must be non-negative, got {self.lam}")
        if not self.alpha >= 0:
            raise ParameterError(f"alpha must be non-negative, got {self.alpha}")
        if self.base_lr < 0 or self.weight_decay < 0 or self.lr_scale_divisor <= 0:
            raise ParameterError("learning rate, weight decay and lr divisor must be non-negative")
        if self.warmup_epochs < 0:
            raise ParameterError("warmup_epochs must be >= 0")
        if self.variant not in ("linear", "mlp"):
            raise ParameterError(f"variant must be 'linear' or 'mlp', got {self.variant!r}")
        if self.reduction not in ("mean", "sum"):
            raise ParameterError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")

    @property
    def peak_lr(self):
        return self.base_lr * self.batch_size / self.lr_scale_divisor

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_overrides(self, overrides):
        """Copy with ``{key: value}`` overrides; string values are coerced to the field type."""
        return apply_overrides(self, overrides, KEY_ALIASES)

    @classmethod
    def from_text(cls, text, base=None):
        """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
        return (base or cls()).with_overrides(parse_kv_text(text))

    @classmethod
    def from_file(cls, path, base=None):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), base)


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    cyc: float
    reg: float
    total: float
    clamped: int


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    # epoch index -> metrics dict; epoch 0 is the initialized head
    epochs: list = field(default_factory=list)

    def to_jsonl(self):
        lines = [json.dumps({"type": "step", **dataclasses.asdict(r)}, sort_keys=True) for r in self.steps]
        lines += [json.dumps({"type": "epoch", **snap}, sort_keys=True) for snap in self.epochs]
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


@dataclass(frozen=True)
class _Draw:
    video: int
    t1: int
    t2: int
    backward_pos: np.ndarray


def _item_gradients(params, corpus, draw, pos, config):
    frames = corpus[draw.video].frames
    raw = (frames[draw.t1] + pos, frames[draw.t2] + pos, frames[draw.t1] + draw.backward_pos)
    outs = [project_forward(params, x) for x in raw]
    res = total_loss([o for o, _ in outs], raw, config.lam, config.temperature, config.reduction)
    grads = None
    for (_, cache), up in zip(outs, (res.grad_forward, res.grad_intermediate, res.grad_backward)):
        g = project_backward(params, cache, up).params
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    return res.report, grads


def _snapshot(epoch, corpus, params, pos, config):
    m = evaluate(corpus, config.delta, config.temperature, params, pos)
    return {"epoch": epoch, **m.to_dict()}


def train(corpus, config=None, params=None):
    """Train the head on ``corpus``; returns ``(params, history)``.

    ``params`` overrides the seeded initialization. All randomness (init,
    video order, frame pairs, PEA crops) comes from one generator seeded with
    ``config.seed`` and is drawn on the calling thread, so the result does not
    depend on ``config.threads``.
    """
    cfg = config or TrainConfig()
    cfg.validate()
    if not corpus:
        raise ParameterError("corpus is empty")
    check_homogeneous(corpus)
    first = corpus[0]
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_projection(cfg.variant, first.dim, rng, init_std=cfg.init_std, eps_ln=cfg.eps_ln)
    base_pos = sinusoidal_grid(first.n_h, first.n_w, first.dim).scaled(cfg.pos_scale)
    pos = base_pos.values

    steps_per_epoch = math.ceil(len(corpus) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup = min(cfg.warmup_epochs * steps_per_epoch, total_steps)
    state = OptimizerState.zeros_like(param_arrays(params))
    history = TrainHistory()
    if cfg.eval_every_epoch:
        history.epochs.append(_snapshot(0, corpus, params, pos, cfg))

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        step = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(corpus))
            for start in range(0, len(order), cfg.batch_size):
                draws = []
                for v in order[start : start + cfg.batch_size]:
                    clip = sample_pair(corpus[int(v)], cfg.delta, rng)
                    bpos = pea_augment(base_pos, cfg.alpha, rng).values
                    draws.append(_Draw(int(v), clip.t1, clip.t2, bpos))

                def work(d, p=params):
                    return _item_gradients(p, corpus, d, pos, cfg)

                results = list(pool.map(work, draws)) if pool else [work(d) for d in draws]
                n = float(len(results))
                # fixed-order fold keeps the sum independent of worker timing
                grads = {k: np.zeros_like(a) for k, a in param_arrays(params).items()}
                cyc = reg = tot = 0.0
                clamped = 0
                for report, g in results:
                    for k in grads:
                        grads[k] += g[k]
                    cyc += report.cyc
                    reg += report.reg
                    tot += report.total
                    clamped += report.clamped
                grads = {k: a / n for k, a in grads.items()}
                cyc, reg, tot = cyc / n, reg / n, tot / n
                if not (math.isfinite(tot) and all(np.all(np.isfinite(a)) for a in grads.values())):
                    raise NumericError(f"non-finite loss or gradient at step {step}", residual=tot, step=step)

                lr = lr_at(step, total_steps, warmup, cfg.peak_lr)
                with np.errstate(over="ignore", invalid="ignore"):
                    new_arrays, state = adamw_step(
                        param_arrays(params), grads, state, lr, cfg.beta1, cfg.beta2, cfg.weight_decay
                    )
                if not all(np.all(np.isfinite(a)) for a in new_arrays.values()):
                    raise NumericError(f"update diverged at step {step}", residual=lr, step=step)
                params = with_arrays(params, new_arrays)
                history.steps.append(StepRecord(step, epoch, lr, cyc, reg, cyc + cfg.lam * reg, clamped))
                step += 1
            if cfg.eval_every_epoch:
                snap = _snapshot(epoch + 1, corpus, params, pos, cfg)
                history.epochs.append(snap)
                log.info("epoch %d: margin %.4f cyc_acc %.4f", epoch + 1, snap["margin"], snap["cyc_acc"])
    finally:
        if pool:
            pool.shutdown()
    return params, history
