"""Binary model serialization and the CSV run-record format.

Model file layout:

    bytes 0..5   magic ``TTLM1\\n``
    bytes 6..13  little-endian uint64: manifest byte length
    manifest     UTF-8 ``key=value`` lines (architecture, representation,
                 factorizations and ranks per stack, gate order, training
                 provenance, seed, vocab hash, ordered tensor declarations)
    blobs        float64 little-endian values, row-major with the last
                 index fastest, in exactly the declared tensor order

Every tensor blob is ``8 * element_count`` bytes, so a save/load round
trip is bitwise. Unknown manifest keys are rejected.

Run records are plain CSV with a single header row and dot-decimal
numbers; files are append-only.
"""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .nn import GATE_ORDER, LayerNormParams, ModelArch, TTLinear, TTLstmModel
from .autograd import Parameter

__all__ = ["MAGIC", "save_model", "load_model", "RunRecord",
           "RUN_RECORD_FIELDS", "append_records", "read_records"]

MAGIC = b"TTLM1\n"
FORMAT_VERSION = 1

_SCALAR_KEYS = {
    "format_version", "vocab_size", "embed_dim", "hidden_dim", "unroll",
    "batch_size", "gate_order", "seed", "vocab_sha256", "tensors",
    "init_kind", "optimizer", "lr", "epochs", "clip", "distill_mode",
    "distill_lambda",
}
_STACK_KEYS = {"kind", "row_dims", "col_dims", "row_ranks", "col_ranks", "ranks", "col_perm"}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def _render(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _stack_manifest(prefix: str, lin: TTLinear) -> dict[str, str]:
    out = {f"{prefix}_kind": lin.kind}
    if lin.kind == "dense":
        return out
    fact = lin.fact
    out[f"{prefix}_row_dims"] = _render(fact.row_dims)
    out[f"{prefix}_col_dims"] = _render(fact.col_dims)
    if fact.col_permutation is not None:
        out[f"{prefix}_col_perm"] = _render(fact.col_permutation)
    train = lin.to_train()
    if lin.kind == "mps":
        out[f"{prefix}_row_ranks"] = _render(train.row_ranks)
        out[f"{prefix}_col_ranks"] = _render(train.col_ranks)
    else:
        out[f"{prefix}_ranks"] = _render(train.ranks)
    return out


def _named_tensors(model: TTLstmModel) -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = [("embedding", model.embed.value)]
    for prefix, lin in (("wx", model.wx), ("wh", model.wh)):
        if lin.kind == "dense":
            tensors.append((f"{prefix}.weight", lin.weight.value))
        elif lin.kind == "mps":
            tensors.extend((f"{prefix}.row{k}", c.value) for k, c in enumerate(lin.row_cores))
            tensors.extend((f"{prefix}.col{k}", c.value) for k, c in enumerate(lin.col_cores))
        else:
            tensors.extend((f"{prefix}.core{k}", c.value) for k, c in enumerate(lin.cores))
    tensors.extend([
        ("gate_bias", model.gate_bias.value),
        ("ln_x.gain", model.ln_x.gain.value), ("ln_x.bias", model.ln_x.bias.value),
        ("ln_h.gain", model.ln_h.gain.value), ("ln_h.bias", model.ln_h.bias.value),
        ("proj.weight", model.proj_w.value), ("proj.bias", model.proj_b.value),
    ])
    return tensors


def save_model(model: TTLstmModel, path, vocab_sha256: str = "",
               train_meta: dict | None = None):
    """Write the model file; bitwise reproducible for identical parameters."""
    arch = model.arch
    manifest: dict[str, str] = {
        "format_version": str(FORMAT_VERSION),
        "vocab_size": str(arch.vocab_size),
        "embed_dim": str(arch.embed_dim),
        "hidden_dim": str(arch.hidden_dim),
        "unroll": str(arch.unroll),
        "batch_size": str(arch.batch_size),
        "gate_order": ",".join(GATE_ORDER),
        "init_kind": arch.init,
        "seed": str(model.seed),
        "vocab_sha256": vocab_sha256,
    }
    manifest.update(_stack_manifest("wx", model.wx))
    manifest.update(_stack_manifest("wh", model.wh))
    for key, value in (train_meta or {}).items():
        if key not in _SCALAR_KEYS:
            raise FormatError(f"train_meta key {key!r} is not a manifest key")
        manifest[key] = str(value)
    tensors = _named_tensors(model)
    manifest["tensors"] = ";".join(
        f"{name}:{'x'.join(str(d) for d in arr.shape)}" for name, arr in tensors)
    text = "".join(f"{k}={v}\n" for k, v in sorted(manifest.items()))
    blob = text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _parse_manifest(blob: bytes, base_offset: int) -> dict[str, str]:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("manifest is not valid UTF-8", base_offset) from exc
    manifest: dict[str, str] = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"manifest line without '=': {line!r}", base_offset)
        key, value = line.split("=", 1)
        if key in manifest:
            raise FormatError(f"duplicate manifest key {key!r}", base_offset)
        manifest[key] = value
    for key in manifest:
        if key in _SCALAR_KEYS:
            continue
        prefix, _, rest = key.partition("_")
        if prefix in ("wx", "wh") and rest in _STACK_KEYS:
            continue
        raise FormatError(f"unknown manifest key {key!r}", base_offset)
    for required in ("format_version", "vocab_size", "embed_dim", "hidden_dim",
                     "gate_order", "tensors", "wx_kind", "wh_kind"):
        if required not in manifest:
            raise FormatError(f"missing manifest key {required!r}", base_offset)
    if manifest["format_version"] != str(FORMAT_VERSION):
        raise FormatError(f"unsupported format version {manifest['format_version']}", base_offset)
    if manifest["gate_order"] != ",".join(GATE_ORDER):
        raise FormatError(f"unsupported gate order {manifest['gate_order']!r}", base_offset)
    return manifest


def _arch_from_manifest(man: dict[str, str]) -> ModelArch:
    def dims(key):
        return _ints(man[key]) if key in man else None

    rep = man["wx_kind"]
    rank = 0
    if rep == "mps" and "wx_row_ranks" in man:
        rank = max(_ints(man["wx_row_ranks"]) + _ints(man["wx_col_ranks"]))
    elif rep == "mpo" and "wx_ranks" in man:
        rank = max(_ints(man["wx_ranks"]))
    n_factors = len(_ints(man["wx_row_dims"])) if "wx_row_dims" in man else 2
    return ModelArch(
        vocab_size=int(man["vocab_size"]),
        embed_dim=int(man["embed_dim"]),
        hidden_dim=int(man["hidden_dim"]),
        representation=rep,
        n_factors=n_factors,
        rank=max(rank, 0 if rep == "dense" else 1),
        init=man.get("init_kind", "gaussian-variance-matched"),
        unroll=int(man.get("unroll", 35)),
        batch_size=int(man.get("batch_size", 20)),
        wx_row_dims=dims("wx_row_dims"), wx_col_dims=dims("wx_col_dims"),
        wh_row_dims=dims("wh_row_dims"), wh_col_dims=dims("wh_col_dims"),
    )


def _rebuild_stack(prefix: str, man: dict[str, str], tensors: dict[str, np.ndarray],
                   out_dim: int, in_dim: int) -> TTLinear:
    from .ttrain import ShapeFactorization

    kind = man[f"{prefix}_kind"]
    if kind == "dense":
        weight = tensors[f"{prefix}.weight"]
        if weight.shape != (out_dim, in_dim):
            raise FormatError(
                f"{prefix}.weight declared {weight.shape}, architecture needs {(out_dim, in_dim)}")
        return TTLinear.dense(weight, name=prefix)
    perm = _ints(man[f"{prefix}_col_perm"]) if f"{prefix}_col_perm" in man else None
    fact = ShapeFactorization(_ints(man[f"{prefix}_row_dims"]),
                              _ints(man[f"{prefix}_col_dims"]), perm)
    lin = TTLinear(kind, out_dim, in_dim, name=prefix, fact=fact,
                   row_cores=[], col_cores=[], cores=[])
    if kind == "mps":
        n, m = fact.n, fact.m
        lin.row_cores = [Parameter(tensors[f"{prefix}.row{k}"], f"{prefix}.row{k}") for k in range(n)]
        lin.col_cores = [Parameter(tensors[f"{prefix}.col{k}"], f"{prefix}.col{k}") for k in range(m)]
        lin.cores = None
    else:
        lin.cores = [Parameter(tensors[f"{prefix}.core{k}"], f"{prefix}.core{k}")
                     for k in range(fact.n)]
        lin.row_cores = lin.col_cores = None
    lin.to_train()   # validates chains against the declared factorization
    return lin


def load_model(path) -> tuple[TTLstmModel, dict[str, str]]:
    """Read a model file back; inverse of :func:`save_model` (bitwise)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic; not a model file", 0)
    head_end = len(MAGIC) + 8
    if len(raw) < head_end:
        raise FormatError("truncated header", len(raw))
    (man_len,) = struct.unpack("<Q", raw[len(MAGIC): head_end])
    man_end = head_end + man_len
    if len(raw) < man_end:
        raise FormatError("truncated manifest", len(raw))
    manifest = _parse_manifest(raw[head_end:man_end], head_end)

    declared: list[tuple[str, tuple[int, ...]]] = []
    for item in manifest["tensors"].split(";"):
        name, _, shape_text = item.partition(":")
        if not shape_text:
            raise FormatError(f"malformed tensor declaration {item!r}", head_end)
        declared.append((name, tuple(int(d) for d in shape_text.split("x"))))

    tensors: dict[str, np.ndarray] = {}
    offset = man_end
    for name, shape in declared:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise FormatError(f"truncated blob for tensor {name!r}", offset)
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                      offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError("trailing bytes after the last declared tensor", offset)

    arch = _arch_from_manifest(manifest)
    try:
        wx = _rebuild_stack("wx", manifest, tensors, 4 * arch.hidden_dim, arch.embed_dim)
        wh = _rebuild_stack("wh", manifest, tensors, 4 * arch.hidden_dim, arch.hidden_dim)
        model = TTLstmModel(
            arch,
            Parameter(tensors["embedding"], "embedding"),
            wx, wh,
            Parameter(tensors["gate_bias"], "gate_bias"),
            LayerNormParams(Parameter(tensors["ln_x.gain"], "ln_x.gain"),
                            Parameter(tensors["ln_x.bias"], "ln_x.bias")),
            LayerNormParams(Parameter(tensors["ln_h.gain"], "ln_h.gain"),
                            Parameter(tensors["ln_h.bias"], "ln_h.bias")),
            Parameter(tensors["proj.weight"], "proj.weight"),
            Parameter(tensors["proj.bias"], "proj.bias"),
            seed=int(manifest.get("seed", 0)),
        )
    except KeyError as exc:
        raise FormatError(f"manifest declares no tensor {exc.args[0]!r}", man_end) from exc
    except ValueError as exc:
        raise FormatError(f"inconsistent tensor declaration: {exc}", man_end) from exc
    return model, manifest


RUN_RECORD_FIELDS = ("command", "config_hash", "representation", "rank",
                     "compression_rate", "lambda", "metric", "value",
                     "value_sd", "timestamp")


@dataclass
class RunRecord:
    """One benchmark/experiment result row."""

    command: str
    metric: str
    value: float
    config_hash: str = ""
    representation: str = ""
    rank: int = 0
    compression_rate: float = 1.0
    lam: float = 0.0
    value_sd: float = 0.0
    timestamp: float = field(default_factory=time.time)

    def row(self) -> dict[str, str]:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "representation": self.representation,
            "rank": repr(int(self.rank)),
            "compression_rate": repr(float(self.compression_rate)),
            "lambda": repr(float(self.lam)),
            "metric": self.metric,
            "value": repr(float(self.value)),
            "value_sd": repr(float(self.value_sd)),
            "timestamp": repr(float(self.timestamp)),
        }


def append_records(path, records: list[RunRecord]):
    """Append rows, writing the header only when the file starts empty."""
    import os

    need_header = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RUN_RECORD_FIELDS)
        if need_header:
            writer.writeheader()
        for record in records:
            writer.writerow(record.row())


def read_records(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
