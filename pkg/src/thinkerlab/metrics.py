"""Per-evaluation scalar metrics and their CSV persistence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError


@dataclass
class MetricsRecord:
    step: int
    train_reward_mean: float
    test_reward_mean: float
    test_reward_median: float
    test_reward_q25: float
    test_reward_q75: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    wall_clock: float


FIELD_NAMES = [f.name for f in fields(MetricsRecord)]


class MetricsWriter:
    """Append-only CSV sink enforcing strictly increasing steps."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.last_step = -1
        if self.path.exists():
            existing = read_metrics(self.path)
            if existing:
                self.last_step = existing[-1].step
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(FIELD_NAMES)

    def append(self, record: MetricsRecord) -> None:
        if record.step <= self.last_step:
            raise DataError(
                f"metrics steps must be strictly increasing: {record.step} after {self.last_step}"
            )
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([getattr(record, name) for name in FIELD_NAMES])
        self.last_step = record.step


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no metrics file at {path}")
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FIELD_NAMES:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            records.append(
                MetricsRecord(
                    step=int(row["step"]),
                    **{
                        name: float(row[name]) if row[name] != "nan" else math.nan
                        for name in FIELD_NAMES
                        if name != "step"
                    },
                )
            )
    return records
