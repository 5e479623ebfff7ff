"""Mode schedules, switch tuples and the single-switch candidate space.

A schedule is a length-``T`` integer array holding one 0-based mode id per
discrete step.  A switch tuple ``(mode, start, duration)`` overwrites the
half-open window ``[start, start + duration)`` of a schedule with ``mode``;
``duration == 0`` leaves the schedule untouched.

The candidate space enumerates every tuple with ``duration >= 1``::

    Z = M * T * (T + 1) / 2

through an index bijection ordered lexicographically by ``(mode, start,
duration)``, and draws from it uniformly without replacement using a sparse
Fisher-Yates shuffle, so memory grows with the number of draws rather than
with ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import CandidateSpaceExhausted, InvalidArgument

__all__ = [
    "SwitchTuple",
    "Segment",
    "CandidateSpace",
    "as_schedule",
    "constant_schedule",
    "stitch",
    "stitch_many",
    "to_run_length",
    "from_run_length",
    "format_schedule",
    "parse_schedule",
    "format_run_length",
    "parse_run_length",
]


class SwitchTuple(NamedTuple):
    mode: int
    start: int
    duration: int

    def validate(self, horizon: int, mode_count: int | None = None) -> None:
        if not 0 <= self.start < horizon:
            raise InvalidArgument(f"switch start {self.start} outside [0, {horizon - 1}]")
        if self.duration < 0 or self.start + self.duration > horizon:
            raise InvalidArgument(
                f"switch window [{self.start}, {self.start + self.duration}) exceeds horizon {horizon}"
            )
        if self.mode < 0 or (mode_count is not None and self.mode >= mode_count):
            raise InvalidArgument(f"mode {self.mode} is not a valid mode id")


@dataclass(frozen=True)
class Segment:
    mode: int
    start: int
    length: int


def as_schedule(modes: Iterable[int] | np.ndarray, mode_count: int | None = None) -> np.ndarray:
    """Return ``modes`` as a read-only 1-D int64 array, validating ids."""
    arr = np.array(modes, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise InvalidArgument("schedule must be non-empty")
    if arr.min() < 0 or (mode_count is not None and arr.max() >= mode_count):
        raise InvalidArgument(f"schedule contains mode ids outside [0, {mode_count})")
    arr.flags.writeable = False
    return arr


def constant_schedule(mode: int, horizon: int) -> np.ndarray:
    return as_schedule(np.full(horizon, mode, dtype=np.int64))


def stitch(base: Sequence[int] | np.ndarray, switch: SwitchTuple) -> np.ndarray:
    """Overwrite ``base[start:start + duration]`` with the switch mode.

    ``base`` is never mutated; a fresh read-only array is returned.
    """
    base = np.asarray(base, dtype=np.int64)
    switch = SwitchTuple(*switch)
    switch.validate(base.size)
    out = base.copy()
    out[switch.start : switch.start + switch.duration] = switch.mode
    out.flags.writeable = False
    return out


def stitch_many(base: np.ndarray, modes: np.ndarray, starts: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Vectorised :func:`stitch`: one stitched schedule per row, shape ``(B, T)``."""
    base = np.asarray(base, dtype=np.int64)
    k = np.arange(base.size)
    starts = np.asarray(starts)[:, None]
    window = (k >= starts) & (k < starts + np.asarray(durations)[:, None])
    return np.where(window, np.asarray(modes)[:, None], base[None, :])


def to_run_length(schedule: Sequence[int] | np.ndarray) -> tuple[Segment, ...]:
    arr = np.asarray(schedule, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise InvalidArgument("cannot segment an empty schedule")
    change = np.flatnonzero(arr[1:] != arr[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [arr.size]))
    return tuple(Segment(int(arr[s]), int(s), int(e - s)) for s, e in zip(starts, ends))


def from_run_length(segments: Iterable[Segment | tuple[int, int, int]]) -> np.ndarray:
    out: list[int] = []
    for seg in segments:
        seg = Segment(*seg) if not isinstance(seg, Segment) else seg
        if seg.start != len(out):
            raise InvalidArgument(f"segment {seg} does not start where the previous one ended ({len(out)})")
        if seg.length < 1:
            raise InvalidArgument(f"segment {seg} has non-positive length")
        out.extend([seg.mode] * seg.length)
    return as_schedule(out)


def format_schedule(schedule: Sequence[int] | np.ndarray) -> str:
    return ",".join(str(int(m)) for m in schedule)


def parse_schedule(text: str) -> np.ndarray:
    try:
        return as_schedule([int(tok) for tok in text.strip().split(",")])
    except ValueError as exc:
        raise InvalidArgument(f"malformed schedule line {text.strip()!r}") from exc


def format_run_length(segments: Iterable[Segment]) -> str:
    return "".join(f"{s.mode}:{s.start}:{s.length}\n" for s in segments)


def parse_run_length(text: str) -> tuple[Segment, ...]:
    segments = []
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            mode, start, length = (int(tok) for tok in line.split(":"))
        except ValueError as exc:
            raise InvalidArgument(f"malformed run-length line {line!r}") from exc
        segments.append(Segment(mode, start, length))
    return tuple(segments)


class CandidateSpace:
    """Lazily indexed set of all single-switch tuples with ``duration >= 1``.

    Indices are ordered lexicographically by ``(mode, start, duration)``, so
    comparing indices is the same as comparing tuples.  ``draw_batch`` hands
    out uniformly random, never-repeating tuples until ``reset`` is called.

    >>> space = CandidateSpace(mode_count=1, horizon=2, seed=0)
    >>> [space.index_to_tuple(i) for i in range(space.total)]
    [SwitchTuple(mode=0, start=0, duration=1), SwitchTuple(mode=0, start=0, duration=2), SwitchTuple(mode=0, start=1, duration=1)]
    """

    def __init__(self, mode_count: int, horizon: int, seed: int | np.random.Generator | None = None):
        if mode_count < 1 or horizon < 1:
            raise InvalidArgument("candidate space needs mode_count >= 1 and horizon >= 1")
        self.mode_count = int(mode_count)
        self.horizon = int(horizon)
        self.per_mode = self.horizon * (self.horizon + 1) // 2
        self.total = self.mode_count * self.per_mode
        mu = np.arange(self.horizon, dtype=np.int64)
        # index of (m, mu, 1) within the block of mode m
        self._offsets = mu * self.horizon - mu * (mu - 1) // 2
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._displaced: dict[int, int] = {}
        self._cursor = 0

    @property
    def remaining(self) -> int:
        return self.total - self._cursor

    @property
    def drawn(self) -> int:
        return self._cursor

    def __len__(self) -> int:
        return self.total

    def __iter__(self) -> Iterator[SwitchTuple]:
        for i in range(self.total):
            yield self.index_to_tuple(i)

    def decode(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised bijection: index array -> ``(modes, starts, durations)`` arrays."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.total):
            raise IndexError(f"candidate index outside [0, {self.total - 1}]")
        modes, rem = np.divmod(idx, self.per_mode)
        starts = np.searchsorted(self._offsets, rem, side="right") - 1
        durations = rem - self._offsets[starts] + 1
        return modes, starts, durations

    def index_to_tuple(self, index: int) -> SwitchTuple:
        if not 0 <= index < self.total:
            raise IndexError(f"candidate index {index} outside [0, {self.total - 1}]")
        m, mu, nu = self.decode(np.array([index]))
        return SwitchTuple(int(m[0]), int(mu[0]), int(nu[0]))

    def tuple_to_index(self, switch: SwitchTuple) -> int:
        m, mu, nu = switch
        if not (0 <= m < self.mode_count and 0 <= mu < self.horizon and 1 <= nu <= self.horizon - mu):
            raise InvalidArgument(f"{switch} is not a member of the candidate space")
        return int(m * self.per_mode + self._offsets[mu] + nu - 1)

    def draw_indices(self, n: int) -> np.ndarray:
        """Next ``min(n, remaining)`` indices of a uniform random permutation."""
        if n < 1:
            raise InvalidArgument("batch size must be >= 1")
        if self.remaining == 0:
            raise CandidateSpaceExhausted(f"all {self.total} candidates drawn")
        n = min(n, self.remaining)
        lo = np.arange(self._cursor, self._cursor + n, dtype=np.int64)
        picks = self._rng.integers(lo, self.total)
        out = np.empty(n, dtype=np.int64)
        displaced = self._displaced
        for slot, (i, j) in enumerate(zip(lo.tolist(), picks.tolist())):
            out[slot] = displaced.get(j, j)
            displaced[j] = displaced.pop(i, i)
        # slot i is now behind the cursor; the entry written for j == i is stale
        for i in lo.tolist():
            displaced.pop(i, None)
        self._cursor += n
        return out

    def draw_batch(self, n: int) -> list[SwitchTuple]:
        modes, starts, durations = self.decode(self.draw_indices(n))
        return [SwitchTuple(int(a), int(b), int(c)) for a, b, c in zip(modes, starts, durations)]

    def reset(self) -> "CandidateSpace":
        """Make every candidate drawable again; the generator keeps advancing."""
        self._displaced.clear()
        self._cursor = 0
        return self
