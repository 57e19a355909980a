"""Command line front end.

Subcommands: recall, ablate-scores, collisions, gram-study, distill, suite.
Common flags: --seed, --out-dir, --config, --format. Every artifact is a pure
function of the flags and the seed; re-runs write identical bytes. Each
subcommand drops a manifest.json next to its artifacts with the flag echo,
seed, and per-file checksums.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from .. import __version__
from ..analysis import (
    collision_matrix,
    mean_absorbed_error,
    rank_study,
    relative_collision_matrix,
    write_collision_csv,
    write_gram_csv,
)
from ..attention import AttentionConfig, distill_feature_map, save_feature_map
from ..numerics import SeededRng
from .experiments import (
    RECORD_COLUMNS,
    ExperimentConfig,
    _distill_corpus,
    eval_recall,
    resolve_feature_map,
    run_ablation,
)
from .io import sha256_file, write_manifest, write_rows_csv, write_rows_json
from .suite import ConfigError, load_config, run_suite
from .synthetic import SyntheticTaskSpec, gen_niah

__all__ = ["main"]


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".", help="directory for emitted artifacts")
    p.add_argument("--config", default=None, help="JSON config file (suite only)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=256, help="haystack length")
    p.add_argument("--d", type=int, default=16, help="head dimension")
    p.add_argument("--feature-dim", type=int, default=None, help="feature map width (default 2*d)")
    p.add_argument("--codebook", type=int, default=16, help="value codebook size")
    p.add_argument("--needles", type=int, default=1)
    p.add_argument("--distribution", choices=("gaussian", "clustered"), default="clustered")
    p.add_argument("--feature-map", default="distill", help="distill | random | path to a saved map")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lola", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recall", help="recall accuracy for one policy")
    _common_flags(p)
    _task_flags(p)
    p.add_argument("--policy", default="lola")
    p.add_argument("--eta", type=int, default=64, help="sliding window capacity")
    p.add_argument("--lam", type=int, default=64, help="sparse cache capacity")
    p.add_argument("--chunk", type=int, default=None, help="chunk size; enables the prefill path")
    p.add_argument("--trials", type=int, default=100)

    p = sub.add_parser("ablate-scores", help="scoring-rule ablation at a matched budget")
    _common_flags(p)
    _task_flags(p)
    p.add_argument("--budget", type=int, default=128, help="total full-rank pairs per row")
    p.add_argument("--trials", type=int, default=100)

    p = sub.add_parser("collisions", help="collision matrices for the three policies")
    _common_flags(p)
    _task_flags(p)
    p.add_argument("--eta", type=int, default=32)
    p.add_argument("--lam", type=int, default=32)
    p.add_argument("--relative", action="store_true", help="also emit relative-error matrices")

    p = sub.add_parser("gram-study", help="exponential-kernel spectra over (n, d) grids")
    _common_flags(p)
    p.add_argument("--n-list", default="64,128,256", help="comma-separated sample counts")
    p.add_argument("--d-list", default="8,16", help="comma-separated dimensions")

    p = sub.add_parser("distill", help="train a feature map and save it")
    _common_flags(p)
    _task_flags(p)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--out", default="feature_map.json")

    p = sub.add_parser("suite", help="run a declared experiment suite")
    _common_flags(p)
    return parser


def _write_records(records, out_dir: Path, name: str, fmt: str) -> Path:
    rows = [asdict(r) for r in records]
    path = out_dir / f"{name}.{fmt}"
    if fmt == "json":
        write_rows_json(path, RECORD_COLUMNS, rows)
    else:
        write_rows_csv(path, RECORD_COLUMNS, rows)
    return path


def _finish(out_dir: Path, args, files: list[Path]) -> int:
    echo = {k: v for k, v in vars(args).items() if k != "out_dir"}
    write_manifest(
        out_dir / "manifest.json",
        config_echo=echo,
        seed=args.seed,
        version=__version__,
        files={p.name: sha256_file(p) for p in files},
    )
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "suite":
        try:
            config = load_config(args.config) if args.config else None
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return run_suite(config, out_dir=out_dir, fmt=args.format)

    if args.command == "gram-study":
        n_list = [int(x) for x in args.n_list.split(",")]
        d_list = [int(x) for x in args.d_list.split(",")]
        results = rank_study(n_list, d_list, args.seed)
        path = out_dir / "gram_study.csv"
        write_gram_csv(results, path)
        print(f"wrote {path}")
        return _finish(out_dir, args, [path])

    task = SyntheticTaskSpec(
        haystack_len=args.n,
        needle_count=args.needles,
        head_dim=args.d,
        key_distribution=args.distribution,
        value_codebook_size=args.codebook,
        seed=args.seed,
    )

    if args.command == "recall":
        exp = ExperimentConfig(
            policy=args.policy,
            window_capacity=args.eta,
            sparse_capacity=args.lam,
            chunk_size=args.chunk,
            trials=args.trials,
            feature_map=args.feature_map,
            feature_dim=args.feature_dim,
            seed=args.seed,
        )
        record = eval_recall(exp, task)
        path = _write_records([record], out_dir, "recall", args.format)
        print(f"accuracy {record.accuracy:.4f} ({record.policy}); wrote {path}")
        return _finish(out_dir, args, [path])

    if args.command == "ablate-scores":
        records = run_ablation(
            task,
            budget=args.budget,
            trials=args.trials,
            seed=args.seed,
            feature_map=args.feature_map,
            feature_dim=args.feature_dim,
        )
        path = _write_records(records, out_dir, "score_ablation", args.format)
        for r in records:
            print(f"{r.name:>18}: accuracy {r.accuracy:.4f}")
        print(f"wrote {path}")
        return _finish(out_dir, args, [path])

    if args.command == "collisions":
        inst = gen_niah(task, seed=args.seed)
        attn = AttentionConfig(task.head_dim, args.feature_dim)
        params = resolve_feature_map(
            ExperimentConfig(feature_map=args.feature_map, seed=args.seed), task, attn
        )
        files = []
        for policy in ("linear-only", "window-only", "lola"):
            cm = collision_matrix(
                inst.keys, inst.values, policy, args.eta, args.lam, attn, params
            )
            path = out_dir / f"collisions-{policy}.csv"
            write_collision_csv(cm, path)
            files.append(path)
            print(f"{policy:>12}: mean absorbed error {mean_absorbed_error(cm):.4f}; wrote {path}")
            if args.relative:
                rel = relative_collision_matrix(
                    inst.keys, inst.values, policy, args.eta, args.lam, attn, params
                )
                rpath = out_dir / f"collisions-{policy}-relative.csv"
                write_collision_csv(rel, rpath)
                files.append(rpath)
        return _finish(out_dir, args, files)

    if args.command == "distill":
        attn = AttentionConfig(args.d, args.feature_dim)
        corpus = _distill_corpus(task, SeededRng(args.seed).child(1))
        params = distill_feature_map(
            SeededRng(args.seed).child(2), attn, corpus, args.steps, args.lr
        )
        path = out_dir / args.out
        save_feature_map(params, path)
        print(f"wrote {path}")
        return _finish(out_dir, args, [path])

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
