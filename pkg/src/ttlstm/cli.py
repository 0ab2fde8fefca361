"""Command-line surface: ``ttlstm train|eval|bench|info``.

Exit codes: 0 success, 2 configuration error, 3 file-format error,
4 numeric failure. All commands accept ``--threads`` (default 1); the
thread count is exported to the BLAS layer before numpy loads, which is
why the heavy imports below live inside the command handlers.

The knowledge-distillation protocol is three invocations:

    ttlstm train --config dense.cfg --corpus train.txt --out teacher.ttlm
    ttlstm info  --model teacher.ttlm --corpus train.txt --covariance-out cov.npz
    ttlstm train --config student.cfg --corpus train.txt \
                 --teacher teacher.ttlm --covariance cov.npz --out student.ttlm

(the covariance pass is only needed for ``distill=kda``).
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

from .errors import ConfigError, FormatError, NumericError

_CONFIG_DEFAULTS: dict[str, str] = {
    "vocab_size": "10000",
    "embed_dim": "",
    "hidden_dim": "",
    "unroll": "35",
    "batch_size": "20",
    "representation": "dense",
    "factors": "2",
    "rank": "0",
    "target_rate": "0",
    "init": "gaussian-variance-matched",
    "wx_row_dims": "",
    "wx_col_dims": "",
    "wh_row_dims": "",
    "wh_col_dims": "",
    "optimizer": "sgd",
    "lr": "1.0",
    "epochs": "1",
    "clip": "5.0",
    "distill": "none",
    "lambda": "0.0",
    "valid_fraction": "0.1",
    "seed": "0",
}


def read_config(path) -> tuple[dict[str, str], str]:
    """Parse a ``key=value`` config file; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = dict(_CONFIG_DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    config_hash = hashlib.sha256(
        "".join(f"{k}={values[k]}\n" for k in sorted(values)).encode()).hexdigest()[:12]
    return values, config_hash


def _dims(text: str):
    return tuple(int(v) for v in text.split(",") if v) or None


def _build_arch(cfg: dict[str, str], vocab_size: int):
    from .contract import pick_rank
    from .nn import ModelArch
    from .ttrain import ShapeFactorization, balanced_factorization

    try:
        embed_dim = int(cfg["embed_dim"])
        hidden_dim = int(cfg["hidden_dim"])
    except ValueError as exc:
        raise ConfigError("embed_dim and hidden_dim are required integers") from exc
    rep = cfg["representation"]
    factors = int(cfg["factors"])
    rank = int(cfg["rank"])
    if rep != "dense" and rank < 1:
        target = float(cfg["target_rate"])
        if target <= 1.0:
            raise ConfigError("tensor-train stacks need rank >= 1 or target_rate > 1")
        rows = _dims(cfg["wx_row_dims"]) or balanced_factorization(4 * hidden_dim, factors)
        cols = _dims(cfg["wx_col_dims"]) or balanced_factorization(embed_dim, factors)
        rank = pick_rank(target, ShapeFactorization(rows, cols), rep)
    return ModelArch(
        vocab_size=vocab_size, embed_dim=embed_dim, hidden_dim=hidden_dim,
        representation=rep, n_factors=factors, rank=rank, init=cfg["init"],
        unroll=int(cfg["unroll"]), batch_size=int(cfg["batch_size"]),
        wx_row_dims=_dims(cfg["wx_row_dims"]), wx_col_dims=_dims(cfg["wx_col_dims"]),
        wh_row_dims=_dims(cfg["wh_row_dims"]), wh_col_dims=_dims(cfg["wh_col_dims"]),
    )


def _read_corpus(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read corpus {path}: {exc}") from exc


def _vocab_path(model_path) -> str:
    return str(model_path) + ".vocab"


def _vocab_sha(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _load_model_and_vocab(path):
    from .data import load_vocab
    from .modelfile import load_model

    model, manifest = load_model(path)
    vocab_file = _vocab_path(path)
    if not os.path.exists(vocab_file):
        raise ConfigError(f"vocab file {vocab_file} not found next to the model")
    expected = manifest.get("vocab_sha256", "")
    if expected and _vocab_sha(vocab_file) != expected:
        raise ConfigError(f"vocab file {vocab_file} does not match the model manifest")
    return model, load_vocab(vocab_file), manifest


def _split_ids(ids, valid_fraction: float):
    import numpy as np

    ids = np.asarray(ids)
    cut = int(round(ids.size * (1.0 - valid_fraction)))
    cut = max(1, min(ids.size - 1, cut))
    return ids[:cut], ids[cut:]


def cmd_train(args) -> int:
    import numpy as np

    from .data import build_vocab, encode_stream, save_vocab
    from .distill import DistillConfig, TeacherWeights
    from .modelfile import RunRecord, append_records, save_model
    from .nn import build_model
    from .training import TrainConfig, evaluate, train_model

    cfg, cfg_hash = read_config(args.config)
    seed = int(args.seed) if args.seed is not None else int(cfg["seed"])
    text = _read_corpus(args.corpus)

    teacher = None
    teacher_weights = None
    if args.teacher:
        teacher, vocab, _ = _load_model_and_vocab(args.teacher)
        teacher_weights = TeacherWeights.from_model(teacher, source=str(args.teacher))
    else:
        vocab = build_vocab(text, int(cfg["vocab_size"]))

    ids = encode_stream(text, vocab)
    train_ids, valid_ids = _split_ids(ids, float(cfg["valid_fraction"]))
    arch = _build_arch(cfg, vocab.size)
    if teacher is not None:
        if (arch.embed_dim, arch.hidden_dim) != (teacher.arch.embed_dim, teacher.arch.hidden_dim):
            raise ConfigError("teacher and student embed/hidden dimensions differ")
    model = build_model(arch, seed=seed)

    distill = DistillConfig(cfg["distill"], float(cfg["lambda"]))
    cov_x = cov_h = None
    if distill.mode == "kda" and distill.active:
        if not args.covariance:
            raise ConfigError("distill=kda needs --covariance from 'ttlstm info --covariance-out'")
        try:
            with np.load(args.covariance) as npz:
                cov_x, cov_h = npz["cov_x"], npz["cov_h"]
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"bad covariance file {args.covariance}: {exc}") from exc

    train_cfg = TrainConfig(
        optimizer=cfg["optimizer"], lr=float(cfg["lr"]), epochs=int(cfg["epochs"]),
        clip=float(cfg["clip"]), distill=distill, seed=seed)

    records: list[RunRecord] = []

    def on_epoch(stats):
        for metric, value in (("train_perplexity", stats.train_ppl),
                              ("valid_perplexity", stats.valid_ppl)):
            records.append(RunRecord(
                command="train", metric=metric, value=value, config_hash=cfg_hash,
                representation=arch.representation, rank=arch.rank,
                compression_rate=model.gate_compression_rate(), lam=distill.lam))
        print(f"epoch {stats.epoch}: train ppl {stats.train_ppl:.3f} "
              f"valid ppl {stats.valid_ppl:.3f} lr {stats.lr:g}")

    try:
        train_model(model, train_ids, valid_ids, train_cfg,
                    teacher=teacher_weights, cov_x=cov_x, cov_h=cov_h,
                    epoch_callback=on_epoch)
    except NumericError:
        records.append(RunRecord(
            command="train", metric="numeric_error", value=float("nan"),
            config_hash=cfg_hash, representation=arch.representation,
            rank=arch.rank, lam=distill.lam))
        if args.records:
            append_records(args.records, records)
        raise

    vocab_file = _vocab_path(args.out)
    save_vocab(vocab, vocab_file)
    save_model(model, args.out, vocab_sha256=_vocab_sha(vocab_file), train_meta={
        "optimizer": cfg["optimizer"], "lr": cfg["lr"], "epochs": cfg["epochs"],
        "clip": cfg["clip"], "distill_mode": distill.mode,
        "distill_lambda": repr(distill.lam),
    })
    if args.records:
        append_records(args.records, records)
    final_nll, final_ppl = evaluate(model, valid_ids)
    print(f"saved {args.out} (validation perplexity {final_ppl:.3f})")
    return 0


def cmd_eval(args) -> int:
    from .data import encode_stream
    from .modelfile import RunRecord, append_records
    from .training import evaluate

    model, vocab, manifest = _load_model_and_vocab(args.model)
    ids = encode_stream(_read_corpus(args.corpus), vocab)
    nll, ppl = evaluate(model, ids)
    print(f"test perplexity {ppl:.4f} (nll {nll:.4f})")
    if args.records:
        append_records(args.records, [RunRecord(
            command="eval", metric="test_perplexity", value=ppl,
            representation=model.arch.representation, rank=model.arch.rank,
            compression_rate=model.gate_compression_rate(),
            lam=float(manifest.get("distill_lambda", "0") or 0))])
    return 0


def cmd_bench(args) -> int:
    import numpy as np

    from .data import encode_stream, make_batches
    from .modelfile import RunRecord, append_records
    from .nn import forward_lm

    runs, discard = int(args.runs), int(args.discard)
    if runs <= discard:
        raise ConfigError(f"runs ({runs}) must exceed discard ({discard})")
    model, vocab, _ = _load_model_and_vocab(args.model)
    ids = encode_stream(_read_corpus(args.corpus), vocab)
    arch = model.arch

    def one_pass():
        state = None
        for batch in make_batches(ids, arch.batch_size, arch.unroll):
            out = forward_lm(model, batch.inputs, tape=None, state=state)
            state = out.state

    seconds = []
    for _ in range(runs):
        start = time.perf_counter()
        one_pass()
        seconds.append(time.perf_counter() - start)
    kept = np.array(seconds[discard:])
    mean, sd = float(kept.mean()), float(kept.std(ddof=1)) if kept.size > 1 else 0.0
    rate = model.gate_compression_rate()
    print(f"forward pass: mean {mean:.4f} s, sd {sd:.4f} s over {kept.size} runs "
          f"({arch.representation}, compression {rate:.2f})")
    if args.records:
        append_records(args.records, [RunRecord(
            command="bench", metric="forward_seconds", value=mean, value_sd=sd,
            representation=arch.representation, rank=arch.rank, compression_rate=rate)])
    return 0


def _info_rows(args):
    import numpy as np

    from .contract import cost_model, efficiency_gain
    from .distill import DataCovariance

    rows = []
    if args.model:
        model, _, manifest = _load_model_and_vocab(args.model)
        arch = model.arch
        rank = arch.rank
        rep = arch.representation
        facts = {"wx": (model.wx, arch.wx_fact() if rep != "dense" else None),
                 "wh": (model.wh, arch.wh_fact() if rep != "dense" else None)}
    elif args.config:
        cfg, _ = read_config(args.config)
        arch = _build_arch(cfg, int(cfg["vocab_size"]))
        rep, rank = arch.representation, arch.rank
        facts = {"wx": (None, arch.wx_fact() if rep != "dense" else None),
                 "wh": (None, arch.wh_fact() if rep != "dense" else None)}
    else:
        raise ConfigError("info needs --model or --config")

    eig = {}
    if args.covariance:
        try:
            with np.load(args.covariance) as npz:
                for stack in ("wx", "wh"):
                    cov = DataCovariance(npz[f"cov_{'x' if stack == 'wx' else 'h'}"], 0,
                                         np.zeros(1))
                    eig[stack] = cov.eigen_extremes()
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"bad covariance file {args.covariance}: {exc}") from exc

    h, e = arch.hidden_dim, arch.embed_dim
    full = {"wx": 4 * h * e, "wh": 4 * h * h}
    for stack, (lin, fact) in facts.items():
        lo, hi = eig.get(stack, ("", ""))
        if rep == "dense":
            rows.append({"matrix": stack, "kind": "dense", "n_factors": 1, "rank": 0,
                         "storage": full[stack], "storage_bound": full[stack],
                         "matvec_ops": full[stack], "build_ops": 0,
                         "ops_bound": full[stack], "compression_rate": 1.0,
                         "efficiency_gain": "", "s_eigen_min": lo, "s_eigen_max": hi})
            continue
        report = cost_model(fact, rank, rep)
        gain = efficiency_gain(fact) if fact.n == fact.m and fact.n >= 2 else ""
        rows.append({"matrix": stack, "kind": rep, "n_factors": fact.n, "rank": rank,
                     "storage": report.storage, "storage_bound": report.storage_bound,
                     "matvec_ops": report.matvec_ops, "build_ops": report.build_ops,
                     "ops_bound": report.matvec_ops_bound,
                     "compression_rate": full[stack] / report.storage,
                     "efficiency_gain": gain, "s_eigen_min": lo, "s_eigen_max": hi})
    return rows


def cmd_info(args) -> int:
    import csv

    import numpy as np

    if args.covariance_out:
        if not (args.model and args.corpus):
            raise ConfigError("--covariance-out needs --model and --corpus")
        from .data import encode_stream
        from .distill import accumulate_covariance
        from .training import collect_stack_inputs

        model, vocab, _ = _load_model_and_vocab(args.model)
        ids = encode_stream(_read_corpus(args.corpus), vocab)
        xs, hs = collect_stack_inputs(model, ids)
        cov_x = accumulate_covariance(xs)
        cov_h = accumulate_covariance(hs)
        np.savez(args.covariance_out, cov_x=cov_x.matrix, cov_h=cov_h.matrix,
                 count_x=cov_x.count, count_h=cov_h.count)
        print(f"wrote {args.covariance_out}: cov_x eigenvalue range {cov_x.eigen_extremes()}, "
              f"cov_h eigenvalue range {cov_h.eigen_extremes()}")
        return 0

    rows = _info_rows(args)
    fields = ["matrix", "kind", "n_factors", "rank", "storage", "storage_bound",
              "matvec_ops", "build_ops", "ops_bound", "compression_rate",
              "efficiency_gain", "s_eigen_min", "s_eigen_max"]
    writer = csv.DictWriter(sys.stdout, fieldnames=fields)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    if args.records:
        from .modelfile import RunRecord, append_records

        append_records(args.records, [RunRecord(
            command="info", metric=f"{row['matrix']}_storage", value=float(row["storage"]),
            representation=str(row["kind"]), rank=int(row["rank"]),
            compression_rate=float(row["compression_rate"])) for row in rows])
    return 0


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttlstm",
        description="Tensor-train compressed LSTM language models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS thread count (default 1; >1 forfeits bitwise determinism)")
        p.add_argument("--records", default=None, help="append run records to this CSV")

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--teacher", default=None)
    p_train.add_argument("--covariance", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    common(p_train)

    p_eval = sub.add_parser("eval", help="test-set perplexity of a model")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--corpus", required=True)
    common(p_eval)

    p_bench = sub.add_parser("bench", help="time full forward passes")
    p_bench.add_argument("--model", required=True)
    p_bench.add_argument("--corpus", required=True)
    p_bench.add_argument("--runs", type=int, default=12)
    p_bench.add_argument("--discard", type=int, default=2)
    common(p_bench)

    p_info = sub.add_parser("info", help="storage/operation cost report as CSV")
    p_info.add_argument("--model", default=None)
    p_info.add_argument("--config", default=None)
    p_info.add_argument("--corpus", default=None)
    p_info.add_argument("--covariance", default=None)
    p_info.add_argument("--covariance-out", dest="covariance_out", default=None)
    common(p_info)
    return parser


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    threads = str(max(1, args.threads))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    handlers = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "info": cmd_info}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
