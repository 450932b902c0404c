"""Deterministic CSV/JSON emission and run comparison.

The CSV schema is stable: one row per (run, epoch), columns
``label,optimizer,seed,epoch,train_loss,test_loss,state_scalars,sr_mode*``.
Floats are written with %.12g so identical runs produce byte-identical
files; wall-clock timings go to the JSON summary only.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .train import RunRecord

__all__ = ["write_records_csv", "write_summary_json", "compare", "write_ranking_csv",
           "read_records_csv"]


def _mode_count(records: list[RunRecord]) -> int:
    for rec in records:
        if rec.grad_stable_ranks:
            return len(rec.grad_stable_ranks[0])
    return 0


def write_records_csv(records: list[RunRecord], path) -> None:
    n_modes = _mode_count(records)
    header = ["label", "optimizer", "seed", "epoch", "train_loss", "test_loss",
              "state_scalars"] + [f"sr_mode{k}" for k in range(n_modes)]
    rows = []
    for rec in sorted(records, key=lambda r: (r.label, r.seed)):
        for epoch in range(rec.epochs):
            row = [rec.label, rec.optimizer, rec.seed, epoch,
                   f"{rec.train_losses[epoch]:.12g}", f"{rec.test_losses[epoch]:.12g}",
                   rec.state_scalars]
            ranks = rec.grad_stable_ranks[epoch] if epoch < len(rec.grad_stable_ranks) else []
            row += [f"{v:.12g}" for v in ranks] + [""] * (n_modes - len(ranks))
            rows.append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_records_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_stderr(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def compare(records: list[RunRecord]) -> list[dict]:
    """Per-label mean +/- 1 standard error of the final test loss, best first.

    Ties (identical means) are broken by label so the ranking is stable.
    """
    by_label: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_label.setdefault(rec.label, []).append(rec)
    rows = []
    for label, recs in by_label.items():
        finals = [r.final_test_loss for r in recs]
        trains = [r.train_losses[-1] for r in recs]
        mean, stderr = _mean_stderr(finals)
        train_mean, train_stderr = _mean_stderr(trains)
        rows.append({
            "label": label,
            "optimizer": recs[0].optimizer,
            "seeds": len(recs),
            "test_loss_mean": mean,
            "test_loss_stderr": stderr,
            "train_loss_mean": train_mean,
            "train_loss_stderr": train_stderr,
            "state_scalars": recs[0].state_scalars,
        })
    rows.sort(key=lambda r: (r["test_loss_mean"], r["label"]))
    for i, row in enumerate(rows):
        row["rank"] = i + 1
    return rows


def write_ranking_csv(ranking: list[dict], path) -> None:
    header = ["rank", "label", "optimizer", "seeds", "test_loss_mean", "test_loss_stderr",
              "train_loss_mean", "train_loss_stderr", "state_scalars"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in ranking:
            writer.writerow([
                row["rank"], row["label"], row["optimizer"], row["seeds"],
                f"{row['test_loss_mean']:.12g}", f"{row['test_loss_stderr']:.12g}",
                f"{row['train_loss_mean']:.12g}", f"{row['train_loss_stderr']:.12g}",
                row["state_scalars"],
            ])


def write_summary_json(records: list[RunRecord], path) -> None:
    payload = {
        "runs": [
            {
                "label": rec.label,
                "optimizer": rec.optimizer,
                "seed": rec.seed,
                "epochs": rec.epochs,
                "final_train_loss": rec.train_losses[-1] if rec.train_losses else None,
                "final_test_loss": rec.test_losses[-1] if rec.test_losses else None,
                "state_scalars": rec.state_scalars,
                "wall_clock_seconds": rec.wall_clock,
            }
            for rec in sorted(records, key=lambda r: (r.label, r.seed))
        ],
        "ranking": compare(records),
    }
    Path(path).write_text(json.dumps(payload, indent=2))
