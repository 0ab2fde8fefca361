"""Optimizers and the deterministic training/evaluation loops.

Training walks the contiguous batch windows in order (no shuffling) with
truncated backpropagation: the recurrent state carries across windows
within an epoch but is detached between them, so runs are bitwise
reproducible for a fixed seed on a single thread.

The default optimizer is plain SGD with global gradient-norm clipping and
a learning rate that halves whenever validation perplexity stops
improving; Adam is available as an option.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape
from .data import BatchStream, make_batches
from .distill import DistillConfig, TeacherWeights, kd_penalty, total_loss
from .errors import ConfigError, NumericError
from .nn import TTLstmModel, cross_entropy_perplexity, forward_lm, sequence_nll

__all__ = ["TrainConfig", "EpochStats", "train_model", "evaluate", "collect_stack_inputs"]


@dataclass
class TrainConfig:
    optimizer: str = "sgd"          # sgd | adam
    lr: float = 1.0
    epochs: int = 1
    clip: float = 5.0
    lr_decay: float = 0.5           # applied when validation stalls (sgd only)
    distill: DistillConfig = field(default_factory=DistillConfig)
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.lr <= 0 or self.clip <= 0:
            raise ConfigError("epochs, lr and clip must be positive")


class _Sgd:
    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.lr

    def step(self, params):
        for p in params:
            if p.grad is not None:
                p.value -= self.lr * p.grad


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.lr
        self.b1, self.b2, self.eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}

    def step(self, params):
        self.t += 1
        for p in params:
            if p.grad is None:
                continue
            key = id(p)
            m = self.m.setdefault(key, np.zeros_like(p.value))
            v = self.v.setdefault(key, np.zeros_like(p.value))
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params, clip: float) -> float:
    """Scale all grads so their global 2-norm is at most ``clip``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > clip:
        factor = clip / norm
        for p in params:
            if p.grad is not None:
                # out-of-place: a grad may share storage with an upstream
                # gradient buffer through view-returning adjoints
                p.grad = p.grad * factor
    return norm


@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    train_ppl: float
    valid_nll: float
    valid_ppl: float
    lr: float
    grad_norm: float


def evaluate(model: TTLstmModel, ids: np.ndarray,
             batch_size: int | None = None, unroll: int | None = None):
    """Token-mean NLL and perplexity over the stream, stateful across
    windows. Remainder tokens beyond the lane layout are dropped."""
    batch_size = batch_size or model.arch.batch_size
    unroll = unroll or model.arch.unroll
    stream = make_batches(ids, batch_size, unroll)
    state = None
    total_nll = 0.0
    total_tokens = 0
    for batch in stream:
        out = forward_lm(model, batch.inputs, tape=None, state=state)
        state = out.state
        nll, _ = cross_entropy_perplexity(out.logits, batch.targets)
        total_nll += nll * batch.targets.size
        total_tokens += batch.targets.size
    nll = total_nll / total_tokens
    return nll, float(np.exp(nll))


def _window_loss(model, tape, batch, distill: DistillConfig,
                 teacher: TeacherWeights | None, cov_x, cov_h, state):
    out = forward_lm(model, batch.inputs, tape, state=state)
    ce = sequence_nll(tape, out, batch.targets)
    penalty = None
    if distill.active:
        assert teacher is not None
        sx = cov_x if distill.mode == "kda" else None
        sh = cov_h if distill.mode == "kda" else None
        pen_x = kd_penalty(tape, teacher.wx, model.wx.dense_var(tape), distill.lam, sx)
        pen_h = kd_penalty(tape, teacher.wh, model.wh.dense_var(tape), distill.lam, sh)
        penalty = ag.add(tape, pen_x, pen_h)
    return total_loss(tape, ce, penalty), float(ce.value), out.state


def train_model(model: TTLstmModel, train_ids: np.ndarray, valid_ids: np.ndarray,
                cfg: TrainConfig, teacher: TeacherWeights | None = None,
                cov_x=None, cov_h=None, epoch_callback=None) -> list[EpochStats]:
    """Train in place and return per-epoch statistics.

    ``teacher`` enables the distillation penalty configured in
    ``cfg.distill``; ``cov_x``/``cov_h`` supply the activation covariances
    for ``kda`` mode. Aborts with :class:`NumericError` if the loss stops
    being finite (after reporting the failing epoch via ``epoch_callback``).
    """
    if cfg.distill.active and teacher is None:
        raise ConfigError("distillation requires a teacher")
    if cfg.distill.mode == "kda" and cfg.distill.active and (cov_x is None or cov_h is None):
        raise ConfigError("kda distillation requires both covariances")
    if teacher is not None:
        if teacher.wx.shape != (model.wx.out_dim, model.wx.in_dim) or \
           teacher.wh.shape != (model.wh.out_dim, model.wh.in_dim):
            raise ConfigError("teacher stacks do not match the student architecture")
    arch = model.arch
    stream = make_batches(train_ids, arch.batch_size, arch.unroll)
    optimizer = _Sgd(cfg) if cfg.optimizer == "sgd" else _Adam(cfg)
    params = model.parameters()
    history: list[EpochStats] = []
    best_valid = math.inf
    for epoch in range(1, cfg.epochs + 1):
        state = None
        nll_sum = 0.0
        token_sum = 0
        last_norm = 0.0
        for batch in stream:
            model.zero_grads()
            tape = Tape()
            loss, ce_value, state = _window_loss(
                model, tape, batch, cfg.distill, teacher, cov_x, cov_h, state)
            if not np.isfinite(loss.value):
                stats = EpochStats(epoch, math.inf, math.inf, math.inf, math.inf,
                                   optimizer.lr, last_norm)
                if epoch_callback:
                    epoch_callback(stats)
                raise NumericError(f"non-finite loss in epoch {epoch}")
            ag.backward(tape, loss)
            last_norm = clip_gradients(params, cfg.clip)
            optimizer.step(params)
            nll_sum += ce_value * batch.targets.size
            token_sum += batch.targets.size
        train_nll = nll_sum / token_sum
        valid_nll, valid_ppl = evaluate(model, valid_ids)
        stats = EpochStats(epoch, train_nll, float(np.exp(train_nll)),
                           valid_nll, valid_ppl, optimizer.lr, last_norm)
        history.append(stats)
        if epoch_callback:
            epoch_callback(stats)
        if cfg.optimizer == "sgd":
            if valid_ppl >= best_valid:
                optimizer.lr *= cfg.lr_decay
        best_valid = min(best_valid, valid_ppl)
    return history


def collect_stack_inputs(model: TTLstmModel, ids: np.ndarray,
                         max_windows: int | None = None):
    """Gather the vectors each gate stack multiplies during a forward pass
    of ``model`` over the stream: embedded inputs (for W_x) and the hidden
    states entering each step (for W_h)."""
    arch = model.arch
    stream = make_batches(ids, arch.batch_size, arch.unroll)
    xs: list[np.ndarray] = []
    hs: list[np.ndarray] = []
    state = (np.zeros((arch.batch_size, arch.hidden_dim)),
             np.zeros((arch.batch_size, arch.hidden_dim)))
    for w, batch in enumerate(stream):
        if max_windows is not None and w >= max_windows:
            break
        xs.append(model.embed.value[batch.inputs.reshape(-1)])
        for t in range(arch.unroll):
            hs.append(state[0])
            step = forward_lm(model, batch.inputs[:, t:t + 1], tape=None, state=state)
            state = step.state
    return np.concatenate(xs, axis=0), np.concatenate(hs, axis=0)
