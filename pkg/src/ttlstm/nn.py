"""Layer-normalized LSTM language model with tensor-train gate stacks.

The four gate matrices acting on the input and the four acting on the
recurrent state are stacked into two matrices ``W_x`` (4H x E) and
``W_h`` (4H x H). Each stack is held either dense, as an MPS train
(applied through its factor pair, never materialized), or as an MPO train
(reconstructed once per forward pass and cached across timesteps).

Gate order in the stacked rows is fixed as (i, f, g, o): input, forget,
cell candidate, output. Layer normalization is applied separately to the
``W_x x`` and ``W_h h`` pre-activations, per gate block of length H, each
with its own gain and bias; the cell state is not normalized. The output
projection is a dense, untied H x V matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tape, Var
from .errors import ConfigError, NumericError, ShapeError, VocabError
from .ttrain import (
    InitScheme,
    MpoTrain,
    MpsTrain,
    ShapeFactorization,
    balanced_factorization,
    new_mpo,
    new_mps,
    reconstruct,
    uniform_mpo_ranks,
    uniform_mps_ranks,
)

__all__ = [
    "GATE_ORDER",
    "LayerNormParams",
    "TTLinear",
    "ModelArch",
    "TTLstmModel",
    "ForwardResult",
    "build_model",
    "layer_norm",
    "lstm_step",
    "forward_lm",
    "sequence_nll",
    "cross_entropy_perplexity",
]

GATE_ORDER = ("i", "f", "g", "o")
LN_EPS = 1e-5


@dataclass
class LayerNormParams:
    """Learned gain and bias for per-block standardization."""

    gain: Var
    bias: Var
    eps: float = LN_EPS


def layer_norm(v: np.ndarray, params: LayerNormParams) -> np.ndarray:
    """Standardize ``v`` over its last axis and apply gain/bias."""
    v = np.asarray(v, dtype=np.float64)
    gain, bias = params.gain.value, params.bias.value
    if v.shape[-1] != gain.shape[-1]:
        raise ShapeError(f"normalized extent {v.shape[-1]} != gain extent {gain.shape[-1]}")
    return ag.layer_norm(None, Var(v), params.gain, params.bias, params.eps).value


def _collapse_right_op(tape: Tape | None, cores: list[Var]) -> Var:
    """Differentiable right-to-left collapse of a core chain; returns a
    ``(first_left_rank, fused_free * last_right_rank)`` Var. Cheap when
    the chain ends on rank 1."""
    last = cores[-1]
    r_prev, extent, r_next = last.shape
    acc = ag.reshape(tape, last, (r_prev, extent * r_next))
    for core in reversed(cores[:-1]):
        r_prev, extent, r_next = core.shape
        mat = ag.reshape(tape, core, (r_prev * extent, r_next))
        prod = ag.matmul(tape, mat, acc)
        acc = ag.reshape(tape, prod, (r_prev, extent * prod.shape[1]))
    return acc


def _collapse_left_op(tape: Tape | None, cores: list[Var]) -> Var:
    """Mirror of :func:`_collapse_right_op`: left-to-right collapse,
    cheap when the chain starts on rank 1; returns
    ``(first_left_rank * fused_free, last_right_rank)``."""
    first = cores[0]
    r_prev, extent, r_next = first.shape
    acc = ag.reshape(tape, first, (r_prev * extent, r_next))
    for core in cores[1:]:
        r_prev, extent, r_next = core.shape
        mat = ag.reshape(tape, core, (r_prev, extent * r_next))
        prod = ag.matmul(tape, acc, mat)
        acc = ag.reshape(tape, prod, (prod.shape[0] * extent, r_next))
    return acc


def _mps_factor_vars(tape, row_cores, col_cores, fact: ShapeFactorization):
    # each chain collapses from its rank-1 boundary end, keeping the cost
    # within the two-rank-factor budget per step
    f_var = _collapse_left_op(tape, row_cores)      # (N, mid)
    cols = _collapse_right_op(tape, col_cores)      # (mid, M)
    g_var = ag.transpose(tape, cols)                # (M, mid)
    return f_var, g_var


def _mps_dense_var(tape, row_cores, col_cores, fact):
    """Full-chain reconstruction (a distinct computational path from the
    factor pair; the two are used to cross-check each other's gradients)."""
    acc = _collapse_right_op(tape, list(row_cores) + list(col_cores))
    return ag.reshape(tape, acc, (fact.n_rows, fact.n_cols))


def _mpo_dense_var(tape, cores, fact: ShapeFactorization):
    acc = _collapse_right_op(tape, cores)
    perm = fact.col_permutation or tuple(range(fact.m))
    pcols = fact.permuted_col_dims()
    split = []
    for i_dim, j_dim in zip(fact.row_dims, pcols):
        split.extend((j_dim, i_dim))
    tensor = ag.reshape(tape, acc, split)
    row_axes = [2 * k + 1 for k in range(fact.n)]
    col_axes = [2 * perm.index(j) for j in range(fact.m)]
    tensor = ag.transpose(tape, tensor, row_axes + col_axes)
    return ag.reshape(tape, tensor, (fact.n_rows, fact.n_cols))


class TTLinear:
    """A linear map ``x -> W x (+ bias)`` whose matrix is dense, MPS or MPO."""

    def __init__(self, kind: str, out_dim: int, in_dim: int, *, name: str,
                 weight: Parameter | None = None,
                 fact: ShapeFactorization | None = None,
                 row_cores=None, col_cores=None, cores=None,
                 bias: Parameter | None = None):
        if kind not in ("dense", "mps", "mpo"):
            raise ConfigError(f"unknown representation {kind!r}")
        self.kind = kind
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.name = name
        self.weight = weight
        self.fact = fact
        self.row_cores = list(row_cores) if row_cores else None
        self.col_cores = list(col_cores) if col_cores else None
        self.cores = list(cores) if cores else None
        self.bias = bias
        if fact is not None and (fact.n_rows, fact.n_cols) != (out_dim, in_dim):
            raise ShapeError(
                f"factorization {fact.n_rows}x{fact.n_cols} != map {out_dim}x{in_dim}")

    @classmethod
    def dense(cls, weight: np.ndarray, *, name: str, bias: np.ndarray | None = None):
        w = np.asarray(weight, dtype=np.float64)
        b = None if bias is None else Parameter(bias, f"{name}.bias")
        return cls("dense", w.shape[0], w.shape[1], name=name,
                   weight=Parameter(w, f"{name}.weight"), bias=b)

    @classmethod
    def from_mps(cls, train: MpsTrain, *, name: str):
        fact = train.fact
        row = [Parameter(c.copy(), f"{name}.row{k}") for k, c in enumerate(train.row_cores)]
        col = [Parameter(c.copy(), f"{name}.col{k}") for k, c in enumerate(train.col_cores)]
        return cls("mps", fact.n_rows, fact.n_cols, name=name, fact=fact,
                   row_cores=row, col_cores=col)

    @classmethod
    def from_mpo(cls, train: MpoTrain, *, name: str):
        fact = train.fact
        cores = [Parameter(c.copy(), f"{name}.core{k}") for k, c in enumerate(train.cores)]
        return cls("mpo", fact.n_rows, fact.n_cols, name=name, fact=fact, cores=cores)

    def parameters(self) -> list[Parameter]:
        if self.kind == "dense":
            params = [self.weight]
        elif self.kind == "mps":
            params = list(self.row_cores) + list(self.col_cores)
        else:
            params = list(self.cores)
        if self.bias is not None:
            params.append(self.bias)
        return params

    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def to_train(self) -> MpsTrain | MpoTrain:
        if self.kind == "mps":
            return MpsTrain(self.fact, tuple(c.value for c in self.row_cores),
                            tuple(c.value for c in self.col_cores))
        if self.kind == "mpo":
            return MpoTrain(self.fact, tuple(c.value for c in self.cores))
        raise ConfigError("dense maps have no train")

    def reconstruct_matrix(self) -> np.ndarray:
        """Dense matrix values (no gradients)."""
        if self.kind == "dense":
            return self.weight.value.copy()
        return reconstruct(self.to_train())

    def dense_var(self, tape) -> Var:
        """Differentiable dense matrix; gradients flow to the cores."""
        if self.kind == "dense":
            return self.weight
        if self.kind == "mps":
            return _mps_dense_var(tape, self.row_cores, self.col_cores, self.fact)
        return _mpo_dense_var(tape, self.cores, self.fact)

    def prepare(self, tape):
        """One-time per-forward-pass setup; returns ``apply(x) -> Var`` for
        batch-first inputs of shape ``(batch, in_dim)``.

        MPS stacks contract to their factor pair here and every later call
        costs ``mid_rank * (batch in + batch out)`` multiply-adds. MPO and
        dense stacks transpose/materialize the matrix once and reuse it.
        """
        bias = self.bias
        if self.kind == "mps":
            f_var, g_var = _mps_factor_vars(tape, self.row_cores, self.col_cores, self.fact)
            f_t = ag.transpose(tape, f_var)

            def apply(x: Var) -> Var:
                out = ag.matmul(tape, ag.matmul(tape, x, g_var), f_t)
                return out if bias is None else ag.add(tape, out, bias)

            return apply
        w = self.weight if self.kind == "dense" else self.dense_var(tape)
        w_t = ag.transpose(tape, w)

        def apply(x: Var) -> Var:
            out = ag.matmul(tape, x, w_t)
            return out if bias is None else ag.add(tape, out, bias)

        return apply


@dataclass(frozen=True)
class ModelArch:
    """Architecture description; everything needed to rebuild a model."""

    vocab_size: int
    embed_dim: int
    hidden_dim: int
    representation: str = "dense"            # dense | mps | mpo
    n_factors: int = 2
    rank: int = 0
    init: str = InitScheme.GAUSSIAN
    unroll: int = 35
    batch_size: int = 20
    wx_row_dims: tuple[int, ...] | None = None
    wx_col_dims: tuple[int, ...] | None = None
    wh_row_dims: tuple[int, ...] | None = None
    wh_col_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim) < 1:
            raise ConfigError("vocab, embedding and hidden sizes must be positive")
        if self.representation not in ("dense", "mps", "mpo"):
            raise ConfigError(f"unknown representation {self.representation!r}")
        if self.representation != "dense" and self.rank < 1:
            raise ConfigError("tensor-train stacks need rank >= 1")

    def _fact(self, rows_override, cols_override, out_dim, in_dim) -> ShapeFactorization:
        rows = rows_override or balanced_factorization(out_dim, self.n_factors)
        cols = cols_override or balanced_factorization(in_dim, self.n_factors)
        return ShapeFactorization(tuple(rows), tuple(cols))

    def wx_fact(self) -> ShapeFactorization:
        return self._fact(self.wx_row_dims, self.wx_col_dims,
                          4 * self.hidden_dim, self.embed_dim)

    def wh_fact(self) -> ShapeFactorization:
        return self._fact(self.wh_row_dims, self.wh_col_dims,
                          4 * self.hidden_dim, self.hidden_dim)


@dataclass
class TTLstmModel:
    arch: ModelArch
    embed: Parameter
    wx: TTLinear
    wh: TTLinear
    gate_bias: Parameter
    ln_x: LayerNormParams
    ln_h: LayerNormParams
    proj_w: Parameter
    proj_b: Parameter
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return self.arch.vocab_size

    @property
    def hidden_dim(self) -> int:
        return self.arch.hidden_dim

    def parameters(self) -> list[Parameter]:
        return ([self.embed] + self.wx.parameters() + self.wh.parameters()
                + [self.gate_bias, self.ln_x.gain, self.ln_x.bias,
                   self.ln_h.gain, self.ln_h.bias, self.proj_w, self.proj_b])

    def zero_grads(self):
        for p in self.parameters():
            p.grad = None

    def gate_param_count(self) -> int:
        return self.wx.param_count() + self.wh.param_count()

    def full_gate_param_count(self) -> int:
        h, e = self.arch.hidden_dim, self.arch.embed_dim
        return 4 * h * e + 4 * h * h

    def gate_compression_rate(self) -> float:
        return self.full_gate_param_count() / self.gate_param_count()


def _stack_linear(arch: ModelArch, fact: ShapeFactorization, name: str,
                  rng: np.random.Generator) -> TTLinear:
    if arch.representation == "dense":
        bound = 1.0 / np.sqrt(fact.n_cols)
        w = rng.uniform(-bound, bound, size=(fact.n_rows, fact.n_cols))
        return TTLinear.dense(w, name=name)
    seed = int(rng.integers(2 ** 62))
    scheme = InitScheme(arch.init)
    if arch.representation == "mps":
        train = new_mps(fact, *uniform_mps_ranks(fact, arch.rank), scheme, seed)
        return TTLinear.from_mps(train, name=name)
    train = new_mpo(fact, uniform_mpo_ranks(fact, arch.rank), scheme, seed)
    return TTLinear.from_mpo(train, name=name)


def build_model(arch: ModelArch, seed: int = 0) -> TTLstmModel:
    """Allocate and initialize a model; bitwise deterministic per seed.

    Parameter creation order is fixed: embedding, W_x, W_h, gate bias,
    layer-norm parameters, output projection. The forget-gate bias block
    starts at 1.0; all other biases start at zero.
    """
    rng = np.random.default_rng(seed)
    v, e, h = arch.vocab_size, arch.embed_dim, arch.hidden_dim
    embed = Parameter(rng.uniform(-0.1, 0.1, size=(v, e)), "embedding")
    wx = _stack_linear(arch, arch.wx_fact(), "wx", rng)
    wh = _stack_linear(arch, arch.wh_fact(), "wh", rng)
    gate_bias = np.zeros(4 * h)
    gate_bias[h:2 * h] = 1.0    # forget gate block
    ln_x = LayerNormParams(Parameter(np.ones((4, h)), "ln_x.gain"),
                           Parameter(np.zeros((4, h)), "ln_x.bias"))
    ln_h = LayerNormParams(Parameter(np.ones((4, h)), "ln_h.gain"),
                           Parameter(np.zeros((4, h)), "ln_h.bias"))
    proj_w = Parameter(rng.uniform(-0.1, 0.1, size=(h, v)), "proj.weight")
    proj_b = Parameter(np.zeros(v), "proj.bias")
    return TTLstmModel(arch, embed, wx, wh, Parameter(gate_bias, "gate_bias"),
                       ln_x, ln_h, proj_w, proj_b, seed=seed)


def _block_norm(tape, pre: Var, ln: LayerNormParams, batch: int, hidden: int) -> Var:
    blocks = ag.reshape(tape, pre, (batch, 4, hidden))
    normed = ag.layer_norm(tape, blocks, ln.gain, ln.bias, ln.eps)
    return ag.reshape(tape, normed, (batch, 4 * hidden))


def _cell_step(tape, model: TTLstmModel, apply_x, apply_h, x: Var, h: Var, c: Var):
    batch = x.shape[0]
    hidden = model.arch.hidden_dim
    ax = _block_norm(tape, apply_x(x), model.ln_x, batch, hidden)
    ah = _block_norm(tape, apply_h(h), model.ln_h, batch, hidden)
    pre = ag.add(tape, ag.add(tape, ax, ah), model.gate_bias)
    gi = ag.narrow(tape, pre, 1, 0, hidden)
    gf = ag.narrow(tape, pre, 1, hidden, hidden)
    gg = ag.narrow(tape, pre, 1, 2 * hidden, hidden)
    go = ag.narrow(tape, pre, 1, 3 * hidden, hidden)
    c_new = ag.add(tape,
                   ag.mul(tape, ag.sigmoid(tape, gf), c),
                   ag.mul(tape, ag.sigmoid(tape, gi), ag.tanh_act(tape, gg)))
    h_new = ag.mul(tape, ag.sigmoid(tape, go), ag.tanh_act(tape, c_new))
    return h_new, c_new


def lstm_step(model: TTLstmModel, x_t: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One recurrence step on plain arrays (no recording). Accepts single
    vectors or batch-first matrices; returns ``(h', c')`` with matching
    dimensionality."""
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x2 = x_t[None, :] if single else x_t
    h2 = np.asarray(h, dtype=np.float64).reshape(x2.shape[0], -1)
    c2 = np.asarray(c, dtype=np.float64).reshape(x2.shape[0], -1)
    if x2.shape[1] != model.wx.in_dim or h2.shape[1] != model.hidden_dim:
        raise ShapeError(f"step shapes {x2.shape}/{h2.shape} do not match the model")
    apply_x = model.wx.prepare(None)
    apply_h = model.wh.prepare(None)
    h_new, c_new = _cell_step(None, model, apply_x, apply_h, Var(x2), Var(h2), Var(c2))
    if single:
        return h_new.value[0], c_new.value[0]
    return h_new.value, c_new.value


@dataclass
class ForwardResult:
    logits: np.ndarray                       # (batch, T, V)
    step_logits: list[Var]
    state: tuple[np.ndarray, np.ndarray]     # detached (h, c)
    tape: Tape | None


def forward_lm(model: TTLstmModel, tokens: np.ndarray, tape: Tape | None = None,
               state: tuple[np.ndarray, np.ndarray] | None = None) -> ForwardResult:
    """Unroll the cell over a ``(batch, T)`` token window.

    The initial state is zero unless a carried ``state`` is supplied; the
    returned state is detached, so gradients never cross window boundaries.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError(f"token batch must be 2-D, got shape {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= model.vocab_size:
        raise VocabError(
            f"token ids must lie in [0, {model.vocab_size}), "
            f"got range [{tokens.min()}, {tokens.max()}]")
    batch, steps = tokens.shape
    hidden = model.arch.hidden_dim
    if state is None:
        h = Var(np.zeros((batch, hidden)))
        c = Var(np.zeros((batch, hidden)))
    else:
        h, c = Var(state[0]), Var(state[1])
    apply_x = model.wx.prepare(tape)
    apply_h = model.wh.prepare(tape)
    proj_t = model.proj_w
    step_logits: list[Var] = []
    for t in range(steps):
        x = ag.gather_rows(tape, model.embed, tokens[:, t])
        h, c = _cell_step(tape, model, apply_x, apply_h, x, h, c)
        logits = ag.add(tape, ag.matmul(tape, h, proj_t), model.proj_b)
        step_logits.append(logits)
    logits = np.stack([lv.value for lv in step_logits], axis=1)
    return ForwardResult(logits, step_logits, (h.value.copy(), c.value.copy()), tape)


def sequence_nll(tape, result: ForwardResult, targets: np.ndarray) -> Var:
    """Token-mean negative log-likelihood over all unrolled steps."""
    targets = np.asarray(targets)
    total = None
    for t, logits in enumerate(result.step_logits):
        ce = ag.cross_entropy(tape, logits, targets[:, t])
        total = ce if total is None else ag.add(tape, total, ce)
    return ag.scale(tape, total, 1.0 / len(result.step_logits))


def cross_entropy_perplexity(logits: np.ndarray, targets: np.ndarray):
    """Token-mean NLL under a softmax over the last axis, and its exp."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets).reshape(-1)
    flat = logits.reshape(-1, logits.shape[-1])
    if flat.shape[0] != targets.shape[0]:
        raise ShapeError(f"{flat.shape[0]} logit rows for {targets.shape[0]} targets")
    if targets.min() < 0 or targets.max() >= flat.shape[1]:
        raise VocabError("target ids outside the logit extent")
    if not np.all(np.isfinite(flat)):
        raise NumericError("non-finite logits")
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = float((log_z - shifted[np.arange(flat.shape[0]), targets]).mean())
    return nll, float(np.exp(nll))
