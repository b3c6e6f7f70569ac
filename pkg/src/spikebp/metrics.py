"""Line-delimited metrics records for external plotting and CI assertions.

One CSV row per record, header first, values printed with full
precision via repr so a round-trip parse recovers them exactly. The
wall_clock_s column is 0.0 unless the caller injects a real clock:
training runs must be byte-reproducible from (seed, config), so real
timing is opt-in rather than default.
"""

import csv
from dataclasses import dataclass

from .errors import FormatError

COLUMNS = ("run_id", "phase", "step", "metric", "value", "wall_clock_s")


@dataclass
class MetricsRecord:
    run_id: str
    phase: str  # train / eval / quantize / simulate
    step: int  # epoch or sweep index
    metric: str
    value: float
    wall_clock_s: float = 0.0


def write_metrics(records, path, append=False):
    """Write records as delimited text; header is emitted for new files."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if not append or f.tell() == 0:
            writer.writerow(COLUMNS)
        for r in records:
            writer.writerow(
                [r.run_id, r.phase, r.step, r.metric, repr(float(r.value)),
                 repr(float(r.wall_clock_s))]
            )


def read_metrics(path):
    """Parse a metrics file back into records (exact float round-trip)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty metrics file") from None
        if tuple(header) != COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}")
        return [
            MetricsRecord(row[0], row[1], int(row[2]), row[3],
                          float(row[4]), float(row[5]))
            for row in reader
        ]
