"""End-to-end training loop with early stopping and geometry tracing.

Each epoch consumes deterministically shuffled positive-pair batches,
updates embeddings with lazy Adam, then records: the epoch-mean training
loss, alignment/uniformity of the full learned representations over the
training interactions, and validation NDCG@20. Early stopping keeps the
snapshot from the best validation epoch.

Ranking and validation use raw dot-product scores even though the losses
normalize; for the graph encoder, the traced/scored representations are
the propagated outputs.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, fields
from math import nan
from pathlib import Path

import numpy as np

from .data import DatasetSplit, PositiveBatch, iter_batches
from .encoders import (
    EmbeddingTable,
    GraphPropagator,
    init_xavier,
    read_embeddings,
    write_embeddings,
)
from .errors import ConfigError, DivergedGradient, InsufficientBatch
from .evaluation import geometry_report, rank_eval
from .losses import bpr_loss, direct_au_loss, sample_negatives
from .optim import AdamState, adam_step
from .rng import substream

OBJECTIVES = ("direct_au", "bpr", "bpr_ds")
ENCODERS = ("mf", "lgcn")


@dataclass
class TrainConfig:
    """All run hyperparameters; validated on construction."""

    objective: str
    seed: int
    encoder: str = "mf"
    layers: int = 0
    gamma: float | None = None
    d: int = 64
    lr: float = 1e-3
    batch_size: int = 256
    weight_decay: float = 0.0
    max_epochs: int = 300
    patience: int = 10
    ds_candidates: int = 32

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.encoder == "lgcn" and self.layers < 1:
            raise ConfigError("encoder=lgcn requires layers >= 1")
        if self.objective == "direct_au":
            if self.gamma is None:
                raise ConfigError("objective=direct_au requires gamma")
            if self.gamma < 0:
                raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        elif self.gamma is not None:
            raise ConfigError("gamma is only valid with objective=direct_au")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.ds_candidates < 1:
            raise ConfigError(f"ds_candidates must be >= 1, got {self.ds_candidates}")

    _PARSERS = {
        "objective": str,
        "encoder": str,
        "layers": int,
        "gamma": float,
        "d": int,
        "lr": float,
        "batch_size": int,
        "weight_decay": float,
        "max_epochs": int,
        "patience": int,
        "seed": int,
        "ds_candidates": int,
    }

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "TrainConfig":
        """Build from string key/values (config file or metadata echo).

        Unknown keys are errors: a typo must never fall back to a default.
        """
        kwargs = {}
        for key, text in raw.items():
            parser = cls._PARSERS.get(key)
            if parser is None:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                kwargs[key] = parser(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from exc
        for required in ("objective", "seed"):
            if required not in kwargs:
                raise ConfigError(f"config key {required!r} is required")
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, str]:
        """Echo as string key/values (inverse of from_mapping)."""
        out: dict[str, str] = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            out[f.name] = f"{val:.17g}" if isinstance(val, float) else str(val)
        return out


@dataclass
class EpochTrace:
    """One epoch's record; geometry fields are full-data metrics, while
    train_loss averages the in-batch objective over the epoch's batches."""

    epoch: int
    train_loss: float
    l_align: float
    l_uniform_user: float
    l_uniform_item: float
    val_ndcg20: float
    wall_seconds: float


class TrainingDiverged(DivergedGradient):
    """Raised when the loop hits non-finite gradients; carries the last
    good snapshot so callers can still inspect/save it."""

    def __init__(self, detail: str, table: EmbeddingTable, traces: list[EpochTrace], best_epoch: int):
        super().__init__(detail)
        self.table = table
        self.traces = traces
        self.best_epoch = best_epoch


def _training_batches(split: DatasetSplit, cfg: TrainConfig, epoch: int) -> list[PositiveBatch]:
    batches = list(iter_batches(split, cfg.batch_size, cfg.seed, epoch))
    if cfg.objective == "direct_au" and len(batches[-1]) == 1:
        if len(batches) == 1:
            raise InsufficientBatch("direct_au needs at least two training pairs")
        # a singleton batch has no pairwise uniformity; fold it into the
        # previous batch instead of changing the loss contract
        tail = batches.pop()
        prev = batches[-1]
        batches[-1] = PositiveBatch(
            users=np.concatenate([prev.users, tail.users]),
            items=np.concatenate([prev.items, tail.items]),
        )
    return batches


def train(
    split: DatasetSplit, cfg: TrainConfig
) -> tuple[EmbeddingTable, list[EpochTrace], int]:
    """Run the configured objective/encoder; return the best snapshot.

    Returns (table, traces, best_epoch) where `table` holds the scoring
    representations (propagated outputs for lgcn) from the epoch with the
    highest validation NDCG@20. Without a validation split, early stopping
    is disabled, val_ndcg20 is NaN, and the final epoch is returned.
    """
    n_users, n_items = split.train.n_users, split.train.n_items
    table = init_xavier(n_users, n_items, cfg.d, cfg.seed)
    propagator = (
        GraphPropagator.build(table, split.train, cfg.layers)
        if cfg.encoder == "lgcn"
        else None
    )
    user_state = AdamState.for_params(table.user_emb, cfg.lr, cfg.weight_decay)
    item_state = AdamState.for_params(table.item_emb, cfg.lr, cfg.weight_decay)
    neg_rng = substream(cfg.seed, "negatives")

    def scoring_table() -> EmbeddingTable:
        return propagator.propagate() if propagator is not None else table

    has_val = split.validation.size > 0
    traces: list[EpochTrace] = []
    best_table = scoring_table().copy()
    best_epoch = 0
    best_val = -np.inf
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        n_batches = 0
        try:
            for batch in _training_batches(split, cfg, epoch):
                loss_sum += _train_batch(
                    batch, table, propagator, user_state, item_state, split, cfg, neg_rng
                )
                n_batches += 1
        except DivergedGradient as exc:
            raise TrainingDiverged(
                f"epoch {epoch}: {exc}", best_table, traces, best_epoch
            ) from exc

        scoring = scoring_table()
        geo = geometry_report(scoring, split.train)
        val = (
            rank_eval(scoring, split, "validation", ks=(20,)).ndcg_at[20]
            if has_val
            else nan
        )
        traces.append(
            EpochTrace(
                epoch=epoch,
                train_loss=loss_sum / n_batches,
                l_align=geo.l_align,
                l_uniform_user=geo.l_uniform_user,
                l_uniform_item=geo.l_uniform_item,
                val_ndcg20=val,
                wall_seconds=time.perf_counter() - t0,
            )
        )

        if has_val:
            if val > best_val:
                best_val, best_epoch, stale = val, epoch, 0
                best_table = scoring.copy()
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        else:
            best_epoch = epoch
            best_table = scoring.copy()

    return best_table, traces, best_epoch


def _batch_loss_and_grads(
    batch: PositiveBatch,
    table: EmbeddingTable,
    propagator: GraphPropagator | None,
    split: DatasetSplit,
    cfg: TrainConfig,
    neg_rng: np.random.Generator,
) -> tuple[float, tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Batch loss and its gradients w.r.t. the base parameter rows.

    Returns (value, (user_rows, user_grads), (item_rows, item_grads));
    duplicate batch rows are pre-accumulated, and for the graph encoder the
    gradients are pulled back through the propagation (dense rows).
    """
    bu, bi = batch.users, batch.items
    out = propagator.propagate() if propagator is not None else table
    u_reps = out.user_emb[bu]
    i_reps = out.item_emb[bi]

    negs = None
    if cfg.objective == "direct_au":
        lo = direct_au_loss(u_reps, i_reps, cfg.gamma)
    else:
        strategy = "dynamic" if cfg.objective == "bpr_ds" else "uniform"
        negs = sample_negatives(
            split, bu, strategy, table=out, candidates=cfg.ds_candidates, rng=neg_rng
        )
        lo = bpr_loss(u_reps, i_reps, out.item_emb[negs], score="dot")

    item_ids = bi if negs is None else np.concatenate([bi, negs])
    item_grads = lo.grad_item if negs is None else np.vstack([lo.grad_item, lo.grad_neg])
    if propagator is None:
        rows_u, inv_u = np.unique(bu, return_inverse=True)
        grad_u = np.zeros((rows_u.size, table.d))
        np.add.at(grad_u, inv_u, lo.grad_user)
        rows_i, inv_i = np.unique(item_ids, return_inverse=True)
        grad_i = np.zeros((rows_i.size, table.d))
        np.add.at(grad_i, inv_i, item_grads)
        return lo.value, (rows_u, grad_u), (rows_i, grad_i)

    g_user = np.zeros_like(table.user_emb)
    g_item = np.zeros_like(table.item_emb)
    np.add.at(g_user, bu, lo.grad_user)
    np.add.at(g_item, item_ids, item_grads)
    gu_base, gi_base = propagator.backward(g_user, g_item)
    return (
        lo.value,
        (np.arange(table.n_users), gu_base),
        (np.arange(table.n_items), gi_base),
    )


def _train_batch(
    batch: PositiveBatch,
    table: EmbeddingTable,
    propagator: GraphPropagator | None,
    user_state: AdamState,
    item_state: AdamState,
    split: DatasetSplit,
    cfg: TrainConfig,
    neg_rng: np.random.Generator,
) -> float:
    """One gradient step; returns the batch loss value."""
    value, (rows_u, grad_u), (rows_i, grad_i) = _batch_loss_and_grads(
        batch, table, propagator, split, cfg, neg_rng
    )
    adam_step(user_state, table.user_emb, rows_u, grad_u)
    adam_step(item_state, table.item_emb, rows_i, grad_i)
    return value


TRACE_COLUMNS = (
    "epoch",
    "train_loss",
    "l_align",
    "l_uniform_user",
    "l_uniform_item",
    "val_ndcg20",
    "wall_seconds",
)


def emit_trace(traces: list[EpochTrace], path: str | Path) -> None:
    """Write the per-epoch trace as CSV at 9 significant digits."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for t in traces:
            vals = [str(t.epoch)] + [
                f"{getattr(t, col):.9g}" for col in TRACE_COLUMNS[1:]
            ]
            fh.write(",".join(vals) + "\n")


def read_trace(path: str | Path) -> list[EpochTrace]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochTrace(
                epoch=int(row["epoch"]),
                **{col: float(row[col]) for col in TRACE_COLUMNS[1:]},
            )
            for row in reader
        ]


def save_checkpoint(
    out_dir: str | Path, table: EmbeddingTable, cfg: TrainConfig, best_epoch: int
) -> tuple[Path, Path]:
    """Write embeddings.txt + metadata.txt (config echo, best epoch)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emb_path = out_dir / "embeddings.txt"
    meta_path = out_dir / "metadata.txt"
    write_embeddings(table, emb_path)
    meta = cfg.to_mapping()
    meta["best_epoch"] = str(best_epoch)
    with meta_path.open("w", encoding="utf-8") as fh:
        for key, val in meta.items():
            fh.write(f"{key}={val}\n")
    return emb_path, meta_path


def load_checkpoint(out_dir: str | Path) -> tuple[EmbeddingTable, TrainConfig, int]:
    """Inverse of save_checkpoint."""
    out_dir = Path(out_dir)
    table = read_embeddings(out_dir / "embeddings.txt")
    raw: dict[str, str] = {}
    with (out_dir / "metadata.txt").open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            raw[key] = val
    best_epoch = int(raw.pop("best_epoch", "0"))
    return table, TrainConfig.from_mapping(raw), best_epoch
