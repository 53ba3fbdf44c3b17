"""
Event stream container, CSV/text I/O and the Surface of Active Events.

Events are held column-wise in numpy arrays. On disk the CSV format is a
``t,x,y,p`` header followed by one event per line, ``t`` in seconds and
``p`` in {1, 0}; in memory polarity is {+1, -1}.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BoundsError, EventParseError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_WIDTH = 346
DEFAULT_HEIGHT = 260

NEVER = -np.inf


class Event(NamedTuple):
    t: float
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        self.x = np.ascontiguousarray(self.x, dtype=np.int32)
        self.y = np.ascontiguousarray(self.y, dtype=np.int32)
        self.p = np.ascontiguousarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event columns differ in length")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def duration(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(self.t[-1] - self.t[0])

    def subset(self, idx) -> "EventStream":
        return EventStream(self.t[idx], self.x[idx], self.y[idx], self.p[idx],
                           self.width, self.height, dict(self.meta))

    @classmethod
    def empty(cls, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), width, height)

    @classmethod
    def from_events(cls, events, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT, sort=True):
        events = list(events)
        if not events:
            return cls.empty(width, height)
        arr = np.array([tuple(e) for e in events], dtype=np.float64)
        return make_stream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height, sort=sort)


def make_stream(t, x, y, p, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT, sort=True) -> EventStream:
    """Validate raw columns and build a time-sorted stream.

    Polarity 0 is mapped to -1. Out-of-order input is stable-sorted and
    ``meta["resorted"]`` is set.
    """
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x)
    y = np.asarray(y)
    p = np.asarray(p)
    if len(t) and (not np.all(np.isfinite(t)) or t.min() < 0):
        raise ValidationError("timestamps must be finite and non-negative")
    if np.any(x != np.round(x)) or np.any(y != np.round(y)):
        raise ValidationError("pixel coordinates must be integers")
    x = x.astype(np.int64)
    y = y.astype(np.int64)
    if len(x) and (x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height):
        raise ValidationError(f"event coordinates outside the {width}x{height} sensor")
    if not np.all(np.isin(p, (-1, 0, 1))):
        raise ValidationError("polarity must be one of 1, 0, -1")
    p = np.where(p > 0, 1, -1)
    meta = {"resorted": False}
    if sort and len(t) > 1 and np.any(np.diff(t) < 0):
        order = np.argsort(t, kind="stable")
        t, x, y, p = t[order], x[order], y[order], p[order]
        meta["resorted"] = True
        log.warning("events were not time-ordered; re-sorted %d events", len(t))
    return EventStream(t, x, y, p, width, height, meta)


def _parse_lines(lines, sep):
    rows = []
    for lineno, line in lines:
        fields = line.split(sep) if sep else line.split()
        if len(fields) != 4:
            raise EventParseError(f"expected 4 fields (t, x, y, p), got {len(fields)}", lineno)
        try:
            t = float(fields[0])
            x = float(fields[1])
            y = float(fields[2])
            p = float(fields[3])
        except ValueError as exc:
            raise EventParseError(str(exc), lineno) from None
        rows.append((t, x, y, p))
    return rows


def load_events(path, format="csv", width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT) -> EventStream:
    """Read an event file.

    ``format="csv"`` expects comma-separated ``t,x,y,p`` with an optional
    header line; ``format="text"`` expects whitespace-separated ``t x y p``
    (the Event Camera Dataset layout). Lines starting with ``#`` are skipped.
    """
    if format not in ("csv", "text"):
        raise ValueError(f"unknown event format {format!r}")
    text = Path(path).read_text(encoding="utf-8")
    sep = "," if format == "csv" else None
    lines = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if not lines and s.replace(" ", "").lower() in ("t,x,y,p", "txyp"):
            continue
        lines.append((lineno, s))
    if not lines:
        return EventStream.empty(width, height)

    try:
        body = "\n".join(s for _, s in lines)
        arr = np.loadtxt(io.StringIO(body), delimiter=sep, ndmin=2, dtype=np.float64)
        if arr.shape[1] != 4:
            raise ValueError
    except ValueError:
        # slow path pinpoints the offending line
        arr = np.array(_parse_lines(lines, sep), dtype=np.float64).reshape(-1, 4)
    return make_stream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)


def save_events(stream: EventStream, path) -> None:
    """Write the CSV format; ``%.17g`` keeps timestamps bit-exact on reload."""
    data = np.column_stack([stream.t, stream.x, stream.y, (stream.p > 0).astype(np.int64)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,x,y,p\n")
        if len(stream):
            np.savetxt(fh, data, fmt=["%.17g", "%d", "%d", "%d"], delimiter=",")


class SAE:
    """Per-polarity map of the latest event timestamp.

    Index 0 holds negative, index 1 positive polarity. Cells never written
    hold ``-inf`` so they compare older than any real timestamp.
    """

    def __init__(self, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
        self.width = width
        self.height = height
        self.grid = np.full((2, height, width), NEVER)

    @staticmethod
    def channel(p) -> int:
        return 1 if p > 0 else 0

    def __getitem__(self, key):
        p, x, y = key
        return self.grid[self.channel(p), y, x]

    def update(self, e) -> "SAE":
        t, x, y, p = e
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise BoundsError(f"event at ({x}, {y}) outside {self.width}x{self.height} sensor")
        self.grid[self.channel(p), y, x] = t
        return self


def update_sae(sae: SAE, e) -> SAE:
    return sae.update(e)
