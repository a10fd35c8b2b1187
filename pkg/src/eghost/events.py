"""Timestamped event records and sorted event streams.

Timestamps are integer picoseconds since run start (int64 in memory, u64 on
disk). Electron positions are float32 micrometres in the TEM sample plane so
that they survive a round trip through the binary event format unchanged.
Photons carry no position (the photon arm is a bucket detector).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .errors import BeyondDuration, NegativeTime, OutOfOrder, OutsideFieldOfView

PS_PER_S = 10**12

ELECTRON = "electron"
PHOTON = "photon"


@dataclass(frozen=True)
class ElectronEvent:
    t: int
    x: float
    y: float


@dataclass(frozen=True)
class PhotonEvent:
    t: int


Event = Union[ElectronEvent, PhotonEvent]


@dataclass(frozen=True)
class StreamHeader:
    """Run-level metadata carried by every stream.

    ``fov`` is (x_min, x_max, y_min, y_max) in µm; it is only meaningful for
    electron streams.
    """

    duration_ps: int
    kind: str = PHOTON
    fov: tuple = (0.0, 0.0, 0.0, 0.0)
    nominal_rate: float = 0.0
    seed: Optional[int] = None

    @property
    def duration_s(self) -> float:
        return self.duration_ps / PS_PER_S


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Struct-of-arrays container for one detector's events."""

    header: StreamHeader
    t: np.ndarray
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    validated: bool = field(default=False, compare=False)

    def __post_init__(self):
        t = _frozen(np.array(self.t, dtype=np.int64, copy=True).reshape(-1))
        object.__setattr__(self, "t", t)
        if self.header.kind == ELECTRON:
            n = t.size
            x = np.zeros(n, np.float32) if self.x is None else self.x
            y = np.zeros(n, np.float32) if self.y is None else self.y
            x = _frozen(np.array(x, dtype=np.float32, copy=True).reshape(-1))
            y = _frozen(np.array(y, dtype=np.float32, copy=True).reshape(-1))
            if x.size != n or y.size != n:
                raise ValueError("position arrays must match the number of timestamps")
            object.__setattr__(self, "x", x)
            object.__setattr__(self, "y", y)
        elif self.header.kind == PHOTON:
            object.__setattr__(self, "x", None)
            object.__setattr__(self, "y", None)
        else:
            raise ValueError(f"unknown stream kind {self.header.kind!r}")

    def __len__(self) -> int:
        return int(self.t.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        if self.header != other.header or not np.array_equal(self.t, other.t):
            return False
        if self.is_electron:
            return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
        return True

    @property
    def kind(self) -> str:
        return self.header.kind

    @property
    def is_electron(self) -> bool:
        return self.header.kind == ELECTRON

    @property
    def duration_s(self) -> float:
        return self.header.duration_s

    def __iter__(self) -> Iterator[Event]:
        if self.is_electron:
            for t, x, y in zip(self.t.tolist(), self.x.tolist(), self.y.tolist()):
                yield ElectronEvent(t, x, y)
        else:
            for t in self.t.tolist():
                yield PhotonEvent(t)

    def take(self, idx) -> "EventStream":
        """Sub-stream at the given indices (order kept as given)."""
        idx = np.asarray(idx)
        if self.is_electron:
            return EventStream(self.header, self.t[idx], self.x[idx], self.y[idx])
        return EventStream(self.header, self.t[idx])

    def positions(self) -> np.ndarray:
        """(N, 2) float64 array of electron positions."""
        if not self.is_electron:
            raise TypeError("photon streams carry no positions")
        return np.column_stack([self.x, self.y]).astype(np.float64)


def electron_stream(t, x, y, duration_ps: int, fov=(-20.0, 20.0, -20.0, 20.0), **kw) -> EventStream:
    return EventStream(StreamHeader(int(duration_ps), ELECTRON, tuple(map(float, fov)), **kw), t, x, y)


def photon_stream(t, duration_ps: int, **kw) -> EventStream:
    return EventStream(StreamHeader(int(duration_ps), PHOTON, **kw), t)


def validate_stream(stream: EventStream) -> EventStream:
    """Check ordering and range invariants; return the stream tagged valid.

    Raises OutOfOrder, NegativeTime or BeyondDuration with the offending index.
    Electron positions must be finite and inside the header field of view.
    """
    t = stream.t
    if t.size:
        neg = np.flatnonzero(t < 0)
        if neg.size:
            raise NegativeTime(neg[0])
        bad = np.flatnonzero(t[1:] < t[:-1])
        if bad.size:
            raise OutOfOrder(bad[0] + 1)
        late = np.flatnonzero(t > stream.header.duration_ps)
        if late.size:
            raise BeyondDuration(late[0])
        if stream.is_electron:
            x0, x1, y0, y1 = stream.header.fov
            x, y = stream.x, stream.y
            outside = ~(np.isfinite(x) & np.isfinite(y) & (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1))
            hit = np.flatnonzero(outside)
            if hit.size:
                raise OutsideFieldOfView(hit[0])
    return replace(stream, validated=True)


def sort_events(events: Union[EventStream, Sequence[Event], Iterable[Event]],
                header: Optional[StreamHeader] = None) -> EventStream:
    """Stable sort by timestamp; equal timestamps keep their input order.

    Accepts either an EventStream or a sequence of ElectronEvent/PhotonEvent
    records. For bare records a header is synthesised when none is given,
    with the run duration set to the latest timestamp.
    """
    if isinstance(events, EventStream):
        order = np.argsort(events.t, kind="stable")
        return events.take(order)

    events = list(events)
    is_electron = bool(events) and isinstance(events[0], ElectronEvent)
    t = np.array([e.t for e in events], dtype=np.int64)
    if header is None:
        kind = ELECTRON if is_electron else PHOTON
        fov = (0.0, 0.0, 0.0, 0.0)
        if is_electron:
            # bounding box of the stored (float32) positions
            xs = np.array([e.x for e in events], dtype=np.float32)
            ys = np.array([e.y for e in events], dtype=np.float32)
            fov = (float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max()))
        header = StreamHeader(int(t.max()) if t.size else 0, kind, fov)
    order = np.argsort(t, kind="stable")
    if header.kind == ELECTRON:
        x = np.array([e.x for e in events], dtype=np.float32)
        y = np.array([e.y for e in events], dtype=np.float32)
        return EventStream(header, t[order], x[order], y[order])
    return EventStream(header, t[order])


def concatenate(streams: Sequence[EventStream], header: Optional[StreamHeader] = None) -> EventStream:
    """Join streams of the same kind and stable-sort the result."""
    if not streams:
        raise ValueError("nothing to concatenate")
    header = header or streams[0].header
    t = np.concatenate([s.t for s in streams])
    if header.kind == ELECTRON:
        x = np.concatenate([s.x for s in streams])
        y = np.concatenate([s.y for s in streams])
        return sort_events(EventStream(header, t, x, y))
    return sort_events(EventStream(header, t))
