"""Fast inference kernels and exact cost accounting for tensor trains.

The MPS fast path precomputes a factor pair ``(row_factor, col_factor)``
of shapes ``(N, r)`` and ``(M, r)`` where ``r`` is the shared middle rank,
so that ``W = row_factor @ col_factor.T`` and a matrix-vector product
costs ``r * (N + M)`` multiply-adds without ever materializing ``W``.
The MPO path has to reconstruct the dense matrix; callers may cache it
across calls.

Both paths accept an optional :class:`OpCounter` that accumulates the
exact multiply-add count of every matrix product performed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .ttrain import MpoTrain, MpsTrain, ShapeFactorization, reconstruct

__all__ = [
    "OpCounter",
    "FactorPair",
    "CostReport",
    "build_factor_pair",
    "mps_matvec",
    "mpo_matvec",
    "cost_model",
    "pick_rank",
    "efficiency_gain",
    "compression_rate",
]


@dataclass
class OpCounter:
    """Accumulates exact multiply-add counts. One instance per call site;
    never shared across threads."""

    madds: int = 0

    def add(self, count: int):
        self.madds += int(count)


def _mm(a: np.ndarray, b: np.ndarray, counter: OpCounter | None) -> np.ndarray:
    if counter is not None:
        cols = b.shape[1] if b.ndim == 2 else 1
        counter.add(a.shape[0] * a.shape[1] * cols)
    return a @ b


def _collapse_right(cores, counter: OpCounter | None) -> np.ndarray:
    """Right-to-left pairwise contraction of a core chain.

    Returns a matrix of shape ``(left_rank_first, fused_free * right_rank_last)``
    whose columns enumerate the free middle indices colexicographically with
    the trailing rank index fastest. Cheap when the chain ends on rank 1
    (the collapse then never carries more than two rank factors per step).
    """
    last = cores[-1]
    acc = last.reshape(last.shape[0], last.shape[1] * last.shape[2])
    for core in reversed(cores[:-1]):
        r_prev, extent, r_next = core.shape
        mat = core.reshape(r_prev * extent, r_next)
        acc = _mm(mat, acc, counter)
        acc = acc.reshape(r_prev, extent * acc.shape[1])
    return acc


def _collapse_left(cores, counter: OpCounter | None) -> np.ndarray:
    """Left-to-right pairwise contraction; the mirror of
    :func:`_collapse_right`, cheap when the chain starts on rank 1.

    Returns ``(first_rank * fused_free, right_rank_last)`` with the free
    indices colexicographic (first core slowest).
    """
    first = cores[0]
    acc = first.reshape(first.shape[0] * first.shape[1], first.shape[2])
    for core in cores[1:]:
        r_prev, extent, r_next = core.shape
        acc = _mm(acc, core.reshape(r_prev, extent * r_next), counter)
        acc = acc.reshape(acc.shape[0] * extent, r_next)
    return acc


@dataclass(frozen=True)
class FactorPair:
    """Precomputed row/column chain contractions of one MPS train."""

    row_factor: np.ndarray  # (N, mid_rank)
    col_factor: np.ndarray  # (M, mid_rank)
    source: MpsTrain = field(repr=False)

    @property
    def mid_rank(self) -> int:
        return self.row_factor.shape[1]

    @property
    def n_rows(self) -> int:
        return self.row_factor.shape[0]

    @property
    def n_cols(self) -> int:
        return self.col_factor.shape[0]


def build_factor_pair(mps: MpsTrain, counter: OpCounter | None = None) -> FactorPair:
    """Collapse the row chain and the column chain of an MPS train.

    ``row_factor[i, h]`` contracts all row cores at the row multi-index of
    ``i`` (1-based colexicographic) leaving the middle rank ``h`` free;
    ``col_factor`` does the same for the columns. The product
    ``row_factor @ col_factor.T`` equals the reconstructed matrix.

    Each chain is collapsed pairwise starting from its rank-1 boundary
    (rows left to right, columns right to left), which keeps every step at
    two rank factors and the total build under
    ``R^2 [(n-1) N + (m-1) M]`` multiply-adds.
    """
    fact = mps.fact
    row_factor = _collapse_left(list(mps.row_cores), counter)   # (N, mid)
    cols = _collapse_right(list(mps.col_cores), counter)        # (mid, M)
    col_factor = np.ascontiguousarray(cols.T)
    return FactorPair(row_factor, col_factor, mps)


def mps_matvec(fp: FactorPair, x: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """``y = W @ x`` through the factor pair, in ``mid_rank * (N + M)``
    multiply-adds; the dense matrix is never formed."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (fp.n_cols,):
        raise ShapeError(f"expected input of length {fp.n_cols}, got shape {x.shape}")
    t = _mm(fp.col_factor.T, x, counter)
    return _mm(fp.row_factor, t, counter)


def _chain_madds(extents, ranks) -> int:
    """Multiply-adds of the right-to-left collapse for a chain whose core k
    has shape (ranks[k], extents[k], ranks[k+1])."""
    total = 0
    tail = extents[-1] * ranks[-1]
    for k in range(len(extents) - 2, -1, -1):
        total += ranks[k] * extents[k] * ranks[k + 1] * tail
        tail *= extents[k]
    return total


def _chain_madds_left(extents, ranks) -> int:
    """Multiply-adds of the left-to-right collapse (mirror accounting)."""
    total = 0
    head = ranks[0] * extents[0]
    for k in range(1, len(extents)):
        total += head * ranks[k] * extents[k] * ranks[k + 1]
        head *= extents[k]
    return total


def mpo_matvec(mpo: MpoTrain, x: np.ndarray, cache: np.ndarray | None = None,
               counter: OpCounter | None = None) -> np.ndarray:
    """``y = W @ x`` by reconstructing the dense matrix first.

    Pass the previously reconstructed matrix as ``cache`` to skip the
    rebuild; the arithmetic after reconstruction is identical either way.
    """
    fact = mpo.fact
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (fact.n_cols,):
        raise ShapeError(f"expected input of length {fact.n_cols}, got shape {x.shape}")
    if cache is None:
        if counter is not None:
            counter.add(_chain_madds(fact.fused_dims(), mpo.ranks))
        cache = reconstruct(mpo)
    elif cache.shape != (fact.n_rows, fact.n_cols):
        raise ShapeError(f"cache shape {cache.shape} != {(fact.n_rows, fact.n_cols)}")
    return _mm(cache, x, counter)


@dataclass(frozen=True)
class CostReport:
    """Exact storage/operation counts plus the closed-form bound terms.

    ``storage`` and the ``*_ops`` fields are exact counts for the given
    rank chains. The ``*_bound`` fields evaluate the closed-form bounds
    with R the maximum rank, I the maximum row factor and J the maximum
    column factor; rank planning targets ``storage_bound``.
    """

    kind: str
    n_factors: int
    max_rank: int
    storage: int
    storage_bound: int
    matvec_ops: int       # per matvec, factor pair or dense matrix already built
    build_ops: int        # one-time factor-pair build (MPS) or reconstruction (MPO)
    matvec_ops_bound: int

    @property
    def total_ops_bound(self) -> int:
        return self.matvec_ops_bound


def _rank_chains(fact: ShapeFactorization, ranks, kind: str):
    if kind == "mps":
        if isinstance(ranks, int):
            row = (1,) + (ranks,) * fact.n
            col = (ranks,) * fact.m + (1,)
        else:
            row, col = (tuple(int(r) for r in ranks[0]), tuple(int(r) for r in ranks[1]))
        return row, col
    if isinstance(ranks, int):
        return (1,) + (ranks,) * (fact.n - 1) + (1,)
    return tuple(int(r) for r in ranks)


def cost_model(fact: ShapeFactorization, ranks, kind: str) -> CostReport:
    """Storage and operation accounting for a factorization and rank choice.

    ``ranks`` may be a single uniform inner rank or explicit chains (a
    ``(row_chain, col_chain)`` pair for MPS, one chain for MPO).
    """
    if kind not in ("mps", "mpo"):
        raise DomainError(f"kind must be 'mps' or 'mpo', got {kind!r}")
    n, m = fact.n, fact.m
    big_n, big_m = fact.n_rows, fact.n_cols
    max_i, max_j = max(fact.row_dims), max(fact.col_dims)
    if kind == "mps":
        row, col = _rank_chains(fact, ranks, kind)
        r = max(row + col)
        storage = sum(row[k] * row[k + 1] * fact.row_dims[k] for k in range(n))
        storage += sum(col[k] * col[k + 1] * fact.col_dims[k] for k in range(m))
        storage_bound = r * (max_i + max_j) + r * r * ((n - 1) * max_i + (m - 1) * max_j)
        mid = row[-1]
        matvec_ops = mid * (big_n + big_m)
        build_ops = _chain_madds_left(fact.row_dims, row) + _chain_madds(fact.col_dims, col)
        ops_bound = r * (big_n + big_m) + r * r * ((n - 1) * big_n + (m - 1) * big_m)
    else:
        chain = _rank_chains(fact, ranks, kind)
        fused = fact.fused_dims()
        r = max(chain)
        storage = sum(chain[k] * chain[k + 1] * fused[k] for k in range(n))
        storage_bound = max_i * max_j * (2 * r + (n - 2) * r * r)
        matvec_ops = big_n * big_m
        build_ops = _chain_madds(fused, chain)
        ops_bound = big_n * big_m * (r + r * r * (n - 2))
    return CostReport(kind, n, int(r), int(storage), int(storage_bound),
                      int(matvec_ops), int(build_ops), int(ops_bound))


def pick_rank(target_rate: float, fact: ShapeFactorization, kind: str) -> int:
    """Uniform inner rank whose bound-level storage hits ``1/target_rate``
    of the dense parameter count; floor of the closed form, clamped to 1.

    The closed forms invert ``storage_bound`` (maximum factor extents), so
    the achieved rate measured against ``storage_bound`` tracks the target
    closely, while the exact ``storage`` of uneven factorizations can sit
    well above it.
    """
    if target_rate <= 1.0:
        raise DomainError(f"target rate must exceed 1, got {target_rate}")
    if fact.n != fact.m:
        raise DomainError("rank planning assumes n == m")
    n = fact.n
    kappa = 1.0 / target_rate
    nm = fact.n_rows * fact.n_cols
    max_i, max_j = max(fact.row_dims), max(fact.col_dims)
    if kind == "mps":
        if n == 1:
            r = kappa * nm / (max_i + max_j)
        else:
            r = (math.sqrt(1.0 + 4.0 * kappa * (n - 1) * nm / (max_i + max_j)) - 1.0) / (2 * (n - 1))
    elif kind == "mpo":
        if n == 1:
            raise DomainError("a single-core MPO has no inner rank to plan")
        if n == 2:
            r = kappa * nm / (2.0 * max_i * max_j)
        else:
            r = (math.sqrt(1.0 + kappa * (n - 2) * nm / (max_i * max_j)) - 1.0) / (n - 2)
    else:
        raise DomainError(f"kind must be 'mps' or 'mpo', got {kind!r}")
    return max(1, int(math.floor(r)))


def efficiency_gain(fact: ShapeFactorization) -> float:
    """Ratio of MPO inference cost to MPS inference cost at a matched
    compression rate: ``N M (I + J) / (I J (N + M))``, halved for n == 2."""
    if fact.n != fact.m or fact.n < 2:
        raise DomainError("efficiency gain assumes n == m >= 2")
    big_n, big_m = fact.n_rows, fact.n_cols
    max_i, max_j = max(fact.row_dims), max(fact.col_dims)
    gain = big_n * big_m * (max_i + max_j) / (max_i * max_j * (big_n + big_m))
    if fact.n == 2:
        gain /= 2.0
    return gain


def compression_rate(full_param_count: int, tt_param_count: int) -> float:
    """Dense parameter count over compressed parameter count."""
    if full_param_count <= 0 or tt_param_count <= 0:
        raise DomainError("parameter counts must be positive")
    return full_param_count / tt_param_count
