"""Training-curve records and validation-based early stopping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class TrainCurve:
    """Line-delimited JSON records; kept in memory and optionally appended to a file."""

    def __init__(self, path=None, method: str | None = None):
        self.path = Path(path) if path is not None else None
        self.method = method
        self.rows: list[dict] = []

    def append(self, **row) -> dict:
        if self.method is not None:
            row.setdefault("method", self.method)
        self.rows.append(row)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return row

    def extend(self, other: "TrainCurve") -> None:
        for row in other.rows:
            self.append(**row)

    @classmethod
    def read(cls, path) -> "TrainCurve":
        curve = cls()
        text = Path(path).read_text(encoding="utf-8") if Path(path).exists() else ""
        curve.rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        curve.path = Path(path)
        return curve

    def __len__(self):
        return len(self.rows)


@dataclass
class EarlyStopper:
    """Tracks the best validation score; ``update`` returns True on improvement."""

    patience: int
    best: float = float("-inf")
    best_step: int = -1
    bad_evals: int = 0
    history: list = field(default_factory=list)

    def update(self, step: int, score: float) -> bool:
        self.history.append((step, score))
        if score > self.best:
            self.best, self.best_step, self.bad_evals = score, step, 0
            return True
        self.bad_evals += 1
        return False

    @property
    def exhausted(self) -> bool:
        return self.bad_evals >= self.patience

    def to_dict(self) -> dict:
        return {"patience": self.patience, "best": self.best, "best_step": self.best_step,
                "bad_evals": self.bad_evals, "history": [list(h) for h in self.history]}

    @classmethod
    def from_dict(cls, d) -> "EarlyStopper":
        return cls(d["patience"], d["best"], d["best_step"], d["bad_evals"], [tuple(h) for h in d["history"]])
