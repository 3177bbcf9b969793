"""Training metrics rows and their CSV sink."""

import csv
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

METRICS_COLUMNS = (
    "epoch",
    "entropy",
    "potential",
    "acc_l10",
    "acc_l100",
    "acc_l1000",
    "kinetic",
    "kinetic_sum",
    "task_loss",
    "total_loss",
)

# Eval lengths that have a column of their own.
ACCURACY_COLUMNS = {10: "acc_l10", 100: "acc_l100", 1000: "acc_l1000"}


def format_value(value) -> str:
    """CSV cell text; floats use ``repr`` so they reload bit-identically."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


@dataclass(frozen=True)
class MetricsRow:
    """One eval-interval record.

    ``entropy`` and ``potential`` are raw means over attention rows; accuracy
    columns are empty when their length was not evaluated.
    """

    epoch: int
    entropy: float
    potential: float
    acc_l10: Optional[float]
    acc_l100: Optional[float]
    acc_l1000: Optional[float]
    kinetic: float
    kinetic_sum: float
    task_loss: float
    total_loss: float

    @classmethod
    def from_eval(cls, epoch: int, loss, accuracy: Dict[int, float]) -> "MetricsRow":
        """Build a row from a ``LossBreakdown`` and accuracy per eval length."""
        return cls(
            epoch=epoch,
            entropy=loss.mean_entropy,
            potential=loss.potential,
            acc_l10=accuracy.get(10),
            acc_l100=accuracy.get(100),
            acc_l1000=accuracy.get(1000),
            kinetic=loss.kinetic,
            kinetic_sum=loss.kinetic_sum,
            task_loss=loss.task,
            total_loss=loss.total,
        )

    def cells(self) -> List[str]:
        return [format_value(value) for value in astuple(self)]


class MetricsWriter:
    """Appends ``MetricsRow`` records to a CSV file with the fixed header."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", newline="")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(METRICS_COLUMNS)
        self._handle.flush()

    def write(self, row: MetricsRow) -> None:
        self._writer.writerow(row.cells())
        self._handle.flush()

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
