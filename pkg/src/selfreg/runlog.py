"""Per-iteration run records powering cost-vs-quality curves.

One JSONL line per iteration with exactly the typed fields; run metadata
lives in a sibling file so the record stream stays uniform. The wall_time
field is measured and therefore the one field excluded from determinism
comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CSV_HEADER = "iteration,cumulative_cost,val_bleu,delta,full,weak,self,none"
ACTION_NAMES = ("full", "weak", "self", "none")


@dataclass(frozen=True)
class RunRecord:
    j: int
    cumulative_cost: float
    val_bleu: float
    delta: float
    action_counts: dict[str, int]
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "j": self.j,
                "cumulative_cost": self.cumulative_cost,
                "val_bleu": self.val_bleu,
                "delta": self.delta,
                "action_counts": {k: self.action_counts.get(k, 0) for k in ACTION_NAMES},
                "wall_time": self.wall_time,
            },
            sort_keys=True,
        )


@dataclass
class RunLog:
    policy: str
    seed: int
    config_hash: str = ""
    records: list[RunRecord] = field(default_factory=list)

    def append(self, record: RunRecord) -> None:
        if self.records and record.cumulative_cost < self.records[-1].cumulative_cost:
            raise ValueError("cumulative cost must be nondecreasing")
        self.records.append(record)

    def metadata(self) -> dict:
        return {"policy": self.policy, "seed": self.seed, "config_hash": self.config_hash}

    def write(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")
        meta_path = path.with_name(path.stem + "_meta.json")
        meta_path.write_text(json.dumps(self.metadata(), sort_keys=True), encoding="utf-8")


def read_records(path: str | Path) -> list[RunRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        out.append(
            RunRecord(
                j=rec["j"],
                cumulative_cost=rec["cumulative_cost"],
                val_bleu=rec["val_bleu"],
                delta=rec["delta"],
                action_counts=rec["action_counts"],
                wall_time=rec["wall_time"],
            )
        )
    return out


def export_curve_csv(records: list[RunRecord], path: str | Path) -> None:
    lines = [CSV_HEADER]
    for r in records:
        counts = ",".join(str(r.action_counts.get(k, 0)) for k in ACTION_NAMES)
        lines.append(f"{r.j},{r.cumulative_cost},{r.val_bleu},{r.delta},{counts}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_item_log(items: list[dict], path: str | Path) -> None:
    """Per-item sidecar ({j, id, action, cost} per line) for offline replay."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, sort_keys=True) + "\n")


def read_item_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]
