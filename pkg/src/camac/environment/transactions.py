"""Charging-transaction log ingestion (CSV)."""

import csv
from dataclasses import dataclass
from datetime import datetime, timezone

from ..errors import TransactionFormatError

HEADER = ("timestamp", "station_id", "ev_id", "energy_kwh", "duration_min", "price_total")


@dataclass(frozen=True)
class Transaction:
    timestamp: datetime
    station_id: str
    ev_id: str
    energy_kwh: float
    duration_min: float
    price_total: float


@dataclass
class IngestResult:
    records: list
    rejects: list  # (line number, raw row, reason)

    def __iter__(self):
        return iter((self.records, self.rejects))


def _parse_timestamp(text):
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_row(row):
    if len(row) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} fields, got {len(row)}")
    ts = _parse_timestamp(row[0])
    station, ev = row[1].strip(), row[2].strip()
    if not station or not ev:
        raise ValueError("empty station_id or ev_id")
    energy, duration, price = (float(x) for x in row[3:6])
    if not energy >= 0:
        raise ValueError("energy_kwh must be >= 0")
    if not duration >= 0:
        raise ValueError("duration_min must be >= 0")
    if not price >= 0:
        raise ValueError("price_total must be >= 0")
    return Transaction(ts, station, ev, energy, duration, price)


def ingest_transactions(path, max_reject_fraction=0.5):
    """Parse a transaction CSV into records sorted by timestamp plus a rejects report.

    Raises ``OSError`` when unreadable and ``TransactionFormatError`` when the
    header is wrong or more than half the rows are malformed.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TransactionFormatError("missing header") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise TransactionFormatError(f"bad header {header!r}; expected {','.join(HEADER)}")
        records, rejects = [], []
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            try:
                records.append(_parse_row(row))
            except ValueError as exc:
                rejects.append((lineno, row, str(exc)))
    if n_rows and len(rejects) / n_rows > max_reject_fraction:
        raise TransactionFormatError(f"{len(rejects)} of {n_rows} rows malformed")
    records.sort(key=lambda r: r.timestamp)
    return IngestResult(records, rejects)


def write_transactions(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in records:
            w.writerow([r.timestamp.isoformat().replace("+00:00", "Z"), r.station_id, r.ev_id,
                        repr(r.energy_kwh), repr(r.duration_min), repr(r.price_total)])


def arrival_profile(records, step_minutes=15.0):
    """Counts of transaction starts per time-of-day slot (length ``1440 / step_minutes``)."""
    n = int(round(1440 / step_minutes))
    counts = [0] * n
    for r in records:
        minute = r.timestamp.hour * 60 + r.timestamp.minute
        counts[int(minute // step_minutes) % n] += 1
    return counts
