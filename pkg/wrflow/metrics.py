"""
Per-iteration metrics records, the JSONL writer and tabular export.

Each line of a metrics file is one self-contained JSON record. The writer
flushes after every record, so the file of an interrupted run is a valid
prefix of the full series.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import polars as pl

logger = logging.getLogger(__name__)

# Excluded from determinism comparisons
TIMING_FIELDS = ("wall_time", "sampling_seconds", "training_seconds")

EXPORT_FORMATS = ("csv", "parquet")


@dataclass
class MetricsRecord:
    """
    Summary of one training iteration.

    ``grad_norms`` holds rows of (stream, block, path, grad_norm) when the
    iteration profiled a probe batch.
    """

    iteration: int
    mode: str
    reward_video_mean: float
    reward_video_std: float
    reward_audio_mean: float
    reward_audio_std: float
    reward_sync_mean: float
    reward_sync_std: float
    loss_video: float
    loss_audio: float
    loss_total: float
    conflict_rate: float
    ema_decay: float
    wall_time: float = 0.0
    sampling_seconds: float = 0.0
    training_seconds: float = 0.0
    grad_norms: Optional[List[Dict[str, Any]]] = field(default=None)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def payload(self) -> Dict[str, Any]:
        """Record without timing fields."""
        return {k: v for k, v in self.to_dict().items() if k not in TIMING_FIELDS}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsRecord":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown metrics fields: {unknown}")
        return cls(**data)


SCALAR_COLUMNS = [f.name for f in fields(MetricsRecord) if f.name != "grad_norms"]

_SCHEMA = {
    name: (pl.Int64 if name == "iteration" else pl.Utf8 if name == "mode" else pl.Float64)
    for name in SCALAR_COLUMNS
}


class MetricsWriter:
    """
    Line-delimited JSON metrics sink.

    Example:
        >>> with MetricsWriter("out/metrics.jsonl") as writer:
        ...     writer.write(record)
    """

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "a" if append else "w", encoding="utf-8")
        self._last: Optional[int] = None
        self.count = 0

    def write(self, record: MetricsRecord) -> None:
        if self._last is not None and record.iteration <= self._last:
            raise ValueError(
                f"Metrics iterations must increase: got {record.iteration} after {self._last}"
            )
        self._file.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        self._file.flush()
        self._last = record.iteration
        self.count += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: Union[str, Path]) -> List[MetricsRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(MetricsRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad metrics record ({exc})") from None
    return records


def metrics_frame(records: List[MetricsRecord]) -> pl.DataFrame:
    """Scalar columns of the records, one row per iteration."""
    if not records:
        return pl.DataFrame(schema=_SCHEMA)
    rows = [{k: r.to_dict()[k] for k in SCALAR_COLUMNS} for r in records]
    return pl.DataFrame(rows, schema=_SCHEMA)


def grad_norm_frame(records: List[MetricsRecord]) -> pl.DataFrame:
    """Long table of all profiled gradient norms, tagged by iteration."""
    rows = [
        {"iteration": r.iteration, **row}
        for r in records
        if r.grad_norms
        for row in r.grad_norms
    ]
    schema = {
        "iteration": pl.Int64,
        "stream": pl.Utf8,
        "block": pl.Int64,
        "path": pl.Utf8,
        "grad_norm": pl.Float64,
    }
    return pl.DataFrame(rows, schema=schema) if rows else pl.DataFrame(schema=schema)


def export_metrics(
    source: Union[str, Path], destination: Union[str, Path], fmt: str = "csv"
) -> pl.DataFrame:
    """
    Convert a metrics file to a table.

    Args:
        source: JSONL metrics file
        destination: Output path
        fmt: "csv" or "parquet"

    Returns:
        The exported DataFrame
    """
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"Unknown export format {fmt!r}. Options: {list(EXPORT_FORMATS)}")
    frame = metrics_frame(read_metrics(source))
    destination = Path(destination)
    destination.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        frame.write_csv(destination)
    else:
        frame.write_parquet(destination)
    logger.info(f"Exported {frame.height} records to {destination}")
    return frame
