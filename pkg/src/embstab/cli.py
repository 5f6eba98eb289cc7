"""Command-line pipeline driver.

Subcommands: simulate (synthetic runs), init (seed the reference space),
stabilize (map a new run into it), validate (compare two stored runs),
apply (stream an embedding file through a stored transform). Diagnostics
go to standard error; data goes to files. Exit codes: 0 success, 2
validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConcurrentWriter,
    CorruptFile,
    DimensionMismatch,
    EmbStabError,
    InvalidConfig,
)
from .lowrank import EmbeddingMatrix, rowwise_matmul
from .metrics import MetricsReport, compare_runs, write_report
from .simulator import gen_ground_truth, gen_retrained_run, load_sim_config
from .stabilizer import init_reference, stabilize_run
from .store import (
    DIGEST_SIZE,
    EMB_MAGIC,
    FORMAT_VERSION,
    RunStore,
    read_embedding_header,
    read_embeddings,
    read_transform,
    write_embeddings,
    _EMB_HEADER,
    _PRECISION_TO_DTYPE,
    _ROLE_TO_BYTE,
    _record_dtype,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3

# Rows per streaming chunk in `apply`; keeps memory bounded by row size.
APPLY_CHUNK_ROWS = 65536


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embstab",
        description="Stabilize recommender embedding spaces across retraining runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="seed the reference space from a run")
    p.add_argument("--items", required=True, help="item embedding file (.emb)")
    p.add_argument("--users", required=True, help="user embedding file (.emb)")
    p.add_argument("--run-id", required=True)
    p.add_argument("--out", required=True, help="store root directory")
    p.add_argument("--rank-policy", choices=("strict", "truncate"), default="strict")
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("stabilize", help="map a new run into the reference space")
    p.add_argument("--items", required=True)
    p.add_argument("--users", required=True)
    p.add_argument("--run-id", required=True)
    p.add_argument("--out", required=True, help="store root directory")
    p.add_argument("--ref", default=None, help="pin a reference run id (default: latest)")
    p.add_argument("--rank-policy", choices=("strict", "truncate"), default="strict")
    p.add_argument("--min-overlap", type=int, default=None)
    p.add_argument(
        "--no-advance",
        action="store_true",
        help="do not move the latest-reference pointer to this run",
    )
    p.set_defaults(func=_cmd_stabilize)

    p = sub.add_parser("validate", help="compare two stored runs")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--store", required=True, help="store root directory")
    p.add_argument("--raw", action="store_true", help="compare raw instead of stabilized")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--rbo-p", type=float, default=0.9)
    p.add_argument("--out", default=None, help="report directory (default: store reports/)")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="generate synthetic ground truth and retrained runs")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--runs", type=int, required=True, help="number of retrained runs")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--precision",
        choices=("f32", "f64"),
        default="f32",
        help="storage precision for generated embeddings",
    )
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("apply", help="stream an embedding file through a transform")
    p.add_argument("--emb", required=True)
    p.add_argument("--transform", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_apply)

    return parser


def _load_pair(items_path, users_path) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    items = read_embeddings(items_path)
    users = read_embeddings(users_path)
    if items.dim != users.dim:
        raise DimensionMismatch(
            f"item embedding width {items.dim} != user embedding width {users.dim}"
        )
    return items, users


def _cmd_init(args) -> int:
    items, users = _load_pair(args.items, args.users)
    run, _ = init_reference(items, users, run_id=args.run_id, rank_policy=args.rank_policy)
    store = RunStore(args.out)
    store.init()
    record = store.save_run(run, items, users, rank_policy=args.rank_policy)
    store.advance_reference(record)
    print(f"initialized reference space from run {args.run_id!r}", file=sys.stderr)
    return EXIT_OK


def _cmd_stabilize(args) -> int:
    items, users = _load_pair(args.items, args.users)
    store = RunStore(args.out)
    ref = store.reference_space(args.ref)
    run, _ = stabilize_run(
        items,
        users,
        ref,
        run_id=args.run_id,
        rank_policy=args.rank_policy,
        min_overlap=args.min_overlap,
    )
    record = store.save_run(run, items, users, rank_policy=args.rank_policy)
    if not args.no_advance:
        store.advance_reference(record)
    if run.effective_rank < run.input_dim:
        print(
            f"warning: rank truncated to {run.effective_rank} of {run.input_dim}",
            file=sys.stderr,
        )
    print(
        f"stabilized run {args.run_id!r} against reference {ref.run_id!r}",
        file=sys.stderr,
    )
    return EXIT_OK


def _render_table(report: MetricsReport, run_a: str, run_b: str, raw: bool) -> str:
    mode = "raw" if raw else "stabilized"
    rows = [
        ("User Similarity", f"{run_a} vs {run_b}", report.mean_user_cosine),
        ("Item Similarity", f"{run_a} vs {run_b}", report.mean_item_cosine),
        ("Rank Correlation", f"{run_a}{run_a} vs {run_a}{run_b}", report.mean_rbo),
    ]
    width = max(len(r[1]) for r in rows)
    lines = [f"{'Metric':<17} {'Comparison':<{width}}  {mode.capitalize()}"]
    for name, comparison, value in rows:
        lines.append(f"{name:<17} {comparison:<{width}}  {value:.4f}")
    return "\n".join(lines)


def _cmd_validate(args) -> int:
    store = RunStore(args.store)
    load = store.load_raw if args.raw else store.load_stabilized
    items_a, users_a = load(args.run_a)
    items_b, users_b = load(args.run_b)
    report = compare_runs(
        items_a, users_a, items_b, users_b, top_k=args.top_k, p=args.rbo_p
    )
    out_dir = (
        Path(args.out)
        if args.out
        else store.root / "reports" / f"{args.run_a}_vs_{args.run_b}{'.raw' if args.raw else ''}"
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / "report.txt", out_dir / "report.json")
    print(_render_table(report, args.run_a, args.run_b, args.raw), file=sys.stderr)
    print(f"report written to {out_dir}", file=sys.stderr)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = load_sim_config(args.config)
    if args.runs < 0:
        raise InvalidConfig(f"--runs must be >= 0, got {args.runs}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.float32 if args.precision == "f32" else np.float64
    items, users = gen_ground_truth(cfg)
    pairs = [(items, users)]
    for k in range(1, args.runs + 1):
        pairs.append(gen_retrained_run(items, users, cfg, run_index=k))
    for k, (it, us) in enumerate(pairs):
        write_embeddings(it.astype(dtype), out / f"run_{k:03d}.items.emb")
        write_embeddings(us.astype(dtype), out / f"run_{k:03d}.users.emb")
    print(f"wrote {2 * len(pairs)} embedding files to {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_apply(args) -> int:
    transform = read_transform(args.transform)
    role, precision, count, dim = read_embedding_header(args.emb)
    if dim != transform.shape[0]:
        raise DimensionMismatch(
            f"embedding width {dim} != transform row count {transform.shape[0]}"
        )
    out_dim = transform.shape[1]
    in_dtype = _record_dtype(dim, precision)
    out_dtype = _record_dtype(out_dim, precision)
    out_header = _EMB_HEADER.pack(
        EMB_MAGIC, FORMAT_VERSION, _ROLE_TO_BYTE[role], precision, count, out_dim, 0
    )
    in_digest = hashlib.sha256()
    out_digest = hashlib.sha256()
    tmp = Path(str(args.out) + ".tmp")
    try:
        with open(args.emb, "rb") as src, open(tmp, "wb") as dst:
            in_digest.update(src.read(_EMB_HEADER.size))
            dst.write(out_header)
            out_digest.update(out_header)
            remaining = count
            while remaining > 0:
                n = min(remaining, APPLY_CHUNK_ROWS)
                chunk = src.read(n * in_dtype.itemsize)
                if len(chunk) != n * in_dtype.itemsize:
                    raise CorruptFile(f"{args.emb}: truncated record section")
                in_digest.update(chunk)
                records = np.frombuffer(chunk, dtype=in_dtype)
                out = np.empty(n, dtype=out_dtype)
                out["id"] = records["id"]
                # Same partition-invariant kernel as apply_transform, so the
                # streamed file matches an in-memory application bit for bit.
                transformed = rowwise_matmul(records["vec"], transform)
                out["vec"] = transformed.astype(_PRECISION_TO_DTYPE[precision])
                dst.write(out.tobytes())
                out_digest.update(out.tobytes())
                remaining -= n
            stored = src.read(DIGEST_SIZE)
            if src.read(1) != b"" or in_digest.digest() != stored:
                raise CorruptFile(f"{args.emb}: checksum mismatch")
            dst.write(out_digest.digest())
        os.replace(tmp, args.out)
    finally:
        tmp.unlink(missing_ok=True)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorruptFile, ConcurrentWriter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EmbStabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
