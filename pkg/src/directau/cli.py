"""Command-line pipeline: preprocess, train, eval, probe.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
divergence. One command = one process; all randomness flows from the
config's single seed through named substreams.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .data import (
    load_interactions,
    preprocess,
    read_id_pairs,
    split,
    write_id_map,
    write_interactions,
)
from .encoders import read_embeddings
from .errors import ConfigError, DataError, NumericError
from .evaluation import geometry_report, rank_eval
from .training import (
    TrainConfig,
    emit_trace,
    load_checkpoint,
    save_checkpoint,
    train,
    TrainingDiverged,
)

_DELIMITERS = {"tab": "\t", "comma": ","}


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _read_config_file(path: Path) -> dict[str, str]:
    """Flat key=value lines; blank lines and '#' comments allowed."""
    raw: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            raw[key.strip()] = val.strip()
    return raw


def cmd_preprocess(args: argparse.Namespace) -> int:
    delim = _DELIMITERS[args.delimiter]
    raw = load_interactions(args.input, delim)
    data = preprocess(raw, k_core=args.k_core)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_interactions(data, out, delim)
    write_id_map(data.user_keys, Path(str(out) + ".users.map"), delim)
    write_id_map(data.item_keys, Path(str(out) + ".items.map"), delim)
    density = data.n_pairs / (data.n_users * data.n_items)
    print(
        f"users={data.n_users} items={data.n_items} "
        f"interactions={data.n_pairs} density={density:.6g}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    raw_cfg = _read_config_file(Path(args.config))
    for override in args.set or []:
        key, sep, val = override.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {override!r}")
        raw_cfg[key.strip()] = val.strip()
    cfg = TrainConfig.from_mapping(raw_cfg)

    data_path = Path(args.data)
    data = read_id_pairs(data_path)
    ds = split(data, seed=cfg.seed)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        table, traces, best_epoch = train(ds, cfg)
    except TrainingDiverged as exc:
        emit_trace(exc.traces, out_dir / "trace.csv")
        save_checkpoint(out_dir, exc.table, cfg, exc.best_epoch)
        print(f"training diverged: {exc}; last good snapshot saved", file=sys.stderr)
        return 4

    emit_trace(traces, out_dir / "trace.csv")
    save_checkpoint(out_dir, table, cfg, best_epoch)

    metrics = None
    if ds.validation.size > 0:
        ranked = rank_eval(table, ds, "validation", ks=(10, 20, 50))
        metrics = {
            "recall": {str(k): v for k, v in ranked.recall_at.items()},
            "ndcg": {str(k): v for k, v in ranked.ndcg_at.items()},
        }
    geo = geometry_report(table, ds.train)
    manifest = {
        "config": cfg.to_mapping(),
        "seed": cfg.seed,
        "dataset": {
            "path": str(data_path),
            "n_users": data.n_users,
            "n_items": data.n_items,
            "n_interactions": data.n_pairs,
            "sha256": _file_sha256(data_path),
        },
        "best_epoch": best_epoch,
        "epochs_run": len(traces),
        "metrics": {
            "validation": metrics,
            "geometry": {
                "l_align": geo.l_align,
                "l_uniform": geo.l_uniform,
                "l_uniform_user": geo.l_uniform_user,
                "l_uniform_item": geo.l_uniform_item,
            },
        },
        "artifacts": {
            "checkpoint": str(out_dir / "embeddings.txt"),
            "metadata": str(out_dir / "metadata.txt"),
            "trace": str(out_dir / "trace.csv"),
        },
    }
    for path in manifest["artifacts"].values():
        assert Path(path).exists(), f"manifest references missing artifact {path}"
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"best_epoch={best_epoch} epochs_run={len(traces)} out_dir={out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    table, cfg, _ = load_checkpoint(Path(args.checkpoint))
    data = read_id_pairs(Path(args.data), n_users=table.n_users, n_items=table.n_items)
    if data.n_users != table.n_users or data.n_items != table.n_items:
        raise DataError("checkpoint and dataset disagree on entity counts")
    ds = split(data, seed=cfg.seed)
    try:
        ks = tuple(int(k) for k in args.ks.split(","))
    except ValueError as exc:
        raise ConfigError(f"--ks expects comma-separated integers: {exc}") from exc
    ranked = rank_eval(table, ds, args.split, ks=ks)
    geo = geometry_report(table, ds.train)
    report = {
        "recall": {str(k): v for k, v in ranked.recall_at.items()},
        "ndcg": {str(k): v for k, v in ranked.ndcg_at.items()},
        "l_align": geo.l_align,
        "l_uniform": geo.l_uniform,
        "l_uniform_user": geo.l_uniform_user,
        "l_uniform_item": geo.l_uniform_item,
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    table = read_embeddings(Path(args.embeddings))
    delim = _DELIMITERS[args.delimiter]
    data = read_id_pairs(
        Path(args.interactions), delim, n_users=table.n_users, n_items=table.n_items
    )
    geo = geometry_report(table, data)
    print(
        json.dumps(
            {
                "l_align": geo.l_align,
                "l_uniform": geo.l_uniform,
                "l_uniform_user": geo.l_uniform_user,
                "l_uniform_item": geo.l_uniform_item,
            },
            indent=2,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="directau",
        description="Hypersphere-geometry collaborative filtering toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="dedup + k-core filter + ID remapping")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--delimiter", choices=sorted(_DELIMITERS), default="tab")
    p.add_argument("--k-core", type=int, default=5)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="split + train + trace + checkpoint")
    p.add_argument("--data", required=True, help="preprocessed integer-ID interaction file")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="full-ranking metrics + geometry for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="directory written by train")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("validation", "test"), default="test")
    p.add_argument("--ks", default="10,20,50")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="geometry report for an external embedding dump")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--interactions", required=True)
    p.add_argument("--delimiter", choices=sorted(_DELIMITERS), default="tab")
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
