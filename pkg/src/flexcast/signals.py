"""Enumeration of admissible daily force-off signals.

A signal is a binary day vector where 1 means the device class is forced
off during that step.  Admissible signals are enumerated with a
prefix-extension depth-first search; a completion-count table computed by
backward dynamic programming prunes every prefix that cannot be extended
to an admissible signal, so the search only visits productive nodes.
Bit 0 is tried before bit 1, which yields lexicographic order for free.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

WINDOW_PLACEMENTS = ("start", "end", "split")


@dataclass(frozen=True)
class SignalConstraints:
    """Admissibility rules for a daily force-off signal.

    ``max_off_steps`` bounds the length of a single force-off block,
    ``max_on_steps`` bounds the total number of forced-off steps per day
    and ``max_switches`` bounds the number of value changes.  Every maximal
    constant run, including the first and last of the day, must last at
    least ``min_constant_steps``.  The uncontrolled window of
    ``nightly_uncontrolled_steps`` is pinned to 0 and placed according to
    ``window``.
    """

    horizon_steps: int = 96
    max_off_steps: int = 96
    min_constant_steps: int = 8
    max_switches: int = 6
    max_on_steps: int = 48
    nightly_uncontrolled_steps: int = 20
    window: str = "start"

    def __post_init__(self):
        for name in ("horizon_steps", "max_off_steps", "max_switches", "max_on_steps",
                     "nightly_uncontrolled_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.min_constant_steps < 1:
            raise ValueError("min_constant_steps must be at least 1")
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be positive")
        if self.nightly_uncontrolled_steps > self.horizon_steps:
            raise ValueError("uncontrolled window longer than the horizon")
        if self.window not in WINDOW_PLACEMENTS:
            raise ValueError(f"window must be one of {WINDOW_PLACEMENTS}")

    def pinned_mask(self) -> np.ndarray:
        """Boolean mask of steps forced to 0 by the uncontrolled window."""
        H, w = self.horizon_steps, self.nightly_uncontrolled_steps
        mask = np.zeros(H, dtype=bool)
        if self.window == "start":
            mask[:w] = True
        elif self.window == "end":
            mask[H - w:] = True
        else:
            head = w // 2
            mask[:head] = True
            mask[H - (w - head):] = True
        return mask

    def admits(self, bits) -> bool:
        """Direct check of a single bit vector, independent of the search."""
        b = np.asarray(bits, dtype=np.int8)
        if b.shape != (self.horizon_steps,) or np.any((b != 0) & (b != 1)):
            return False
        if np.any(b[self.pinned_mask()]) or int(b.sum()) > self.max_on_steps:
            return False
        edges = np.flatnonzero(np.diff(b)) + 1
        if len(edges) > self.max_switches:
            return False
        bounds = np.concatenate([[0], edges, [len(b)]])
        lengths = np.diff(bounds)
        if np.any(lengths < self.min_constant_steps):
            return False
        off_runs = lengths[b[bounds[:-1]] == 1]
        return not np.any(off_runs > self.max_off_steps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SignalConstraints":
        return cls(**d)


@dataclass(frozen=True)
class ForceOffSignal:
    """One day's force-off vector (1 = forced off)."""

    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("signal bits must be 0 or 1")

    @property
    def n_switches(self) -> int:
        return sum(a != b for a, b in zip(self.bits, self.bits[1:]))

    @property
    def n_off_steps(self) -> int:
        return sum(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int8)

    @classmethod
    def zeros(cls, horizon: int = 96) -> "ForceOffSignal":
        return cls((0,) * horizon)


class SignalSet:
    """Immutable, array-backed collection of signals in canonical order.

    ``bits`` has shape ``(n, horizon)`` with dtype ``int8``.  Indexing with an
    integer returns a :class:`ForceOffSignal`.
    """

    def __init__(self, bits: np.ndarray, constraints: SignalConstraints | None = None):
        bits = np.ascontiguousarray(bits, dtype=np.int8)
        if bits.ndim != 2:
            raise ValueError("bits must be 2-D")
        bits.setflags(write=False)
        self._bits = bits
        self.constraints = constraints
        n_sw = np.count_nonzero(np.diff(bits, axis=1), axis=1) if bits.shape[1] > 1 else np.zeros(len(bits), int)
        self.n_switches = n_sw.astype(np.int16)
        self.n_off_steps = bits.sum(axis=1, dtype=np.int16)
        self.n_switches.setflags(write=False)
        self.n_off_steps.setflags(write=False)

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def horizon(self) -> int:
        return self._bits.shape[1]

    def __len__(self) -> int:
        return len(self._bits)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return ForceOffSignal(self._bits[i])
        return SignalSet(self._bits[i], self.constraints)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def index_of(self, signal) -> int:
        """Position of ``signal`` in the set, or -1."""
        target = np.asarray(signal.bits if isinstance(signal, ForceOffSignal) else signal, dtype=np.int8)
        hits = np.flatnonzero((self._bits == target).all(axis=1))
        return int(hits[0]) if hits.size else -1

    def save(self, path) -> None:
        """Write a packed bitset ``<path>.bin`` and a JSON index ``<path>.json``."""
        path = Path(path)
        np.packbits(self._bits.astype(np.uint8), axis=1).tofile(path.with_suffix(".bin"))
        meta = {"count": len(self), "horizon": self.horizon,
                "constraints": self.constraints.to_dict() if self.constraints else None}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "SignalSet":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        H = meta["horizon"]
        packed = np.fromfile(path.with_suffix(".bin"), dtype=np.uint8).reshape(meta["count"], -1)
        bits = np.unpackbits(packed, axis=1, count=H).astype(np.int8)
        cons = SignalConstraints.from_dict(meta["constraints"]) if meta["constraints"] else None
        return cls(bits, cons)


@numba.njit(cache=True)
def _completion_table(H, pinned, min_run, max_sw, max_on, max_block):
    # cnt[i, v, r, s, o]: admissible completions of a prefix of length i whose
    # last bit is v, trailing run r (capped at max(min_run, ...)), s switches
    # and o forced-off steps.  Run length of 1-blocks is tracked exactly up to
    # max_block + 1 so the block limit can be enforced.
    R = max(min_run, min(max_block + 1, H)) + 1
    cnt = np.zeros((H + 1, 2, R, max_sw + 1, max_on + 1), dtype=np.int64)
    for v in range(2):
        for r in range(R):
            if r >= min_run:
                for s in range(max_sw + 1):
                    for o in range(max_on + 1):
                        cnt[H, v, r, s, o] = 1
    for i in range(H - 1, 0, -1):
        for v in range(2):
            for r in range(1, R):
                for s in range(max_sw + 1):
                    for o in range(max_on + 1):
                        tot = 0
                        for b in range(2):
                            if b == 1 and pinned[i]:
                                continue
                            no = o + b
                            if no > max_on:
                                continue
                            if b == v:
                                nr = min(r + 1, R - 1)
                                if b == 1 and r + 1 > max_block:
                                    continue
                                tot += cnt[i + 1, b, nr, s, no]
                            else:
                                if r < min_run or s + 1 > max_sw:
                                    continue
                                tot += cnt[i + 1, b, 1, s + 1, no]
                        cnt[i, v, r, s, o] = tot
    return cnt


@numba.njit(cache=True)
def _fill(cnt, H, pinned, min_run, max_sw, max_on, max_block, out):
    R = cnt.shape[2]
    k = 0
    bits = np.zeros(H, dtype=np.int8)
    # explicit stack of (position, next bit to try) for the DFS
    run = np.zeros(H + 1, dtype=np.int64)
    sw = np.zeros(H + 1, dtype=np.int64)
    on = np.zeros(H + 1, dtype=np.int64)
    nxt = np.zeros(H + 1, dtype=np.int64)
    i = 0
    nxt[0] = 0
    while i >= 0:
        if i == H:
            out[k, :] = bits
            k += 1
            i -= 1
            continue
        b = nxt[i]
        if b > 1:
            i -= 1
            continue
        nxt[i] = b + 1
        if b == 1 and pinned[i]:
            continue
        if i == 0:
            nr, ns, no = 1, 0, b
        else:
            v = bits[i - 1]
            no = on[i] + b
            if b == v:
                nr = min(run[i] + 1, R - 1)
                if b == 1 and run[i] + 1 > max_block:
                    continue
                ns = sw[i]
            else:
                if run[i] < min_run:
                    continue
                nr, ns = 1, sw[i] + 1
        if no > max_on or ns > max_sw:
            continue
        if cnt[i + 1, b, nr, ns, no] == 0:
            continue
        bits[i] = b
        run[i + 1], sw[i + 1], on[i + 1] = nr, ns, no
        i += 1
        nxt[i] = 0
    return k


def _tables(c: SignalConstraints):
    pinned = c.pinned_mask()
    max_block = min(c.max_off_steps, c.horizon_steps)
    cnt = _completion_table(c.horizon_steps, pinned, c.min_constant_steps, c.max_switches,
                            min(c.max_on_steps, c.horizon_steps), max_block)
    return cnt, pinned, max_block


def _root_count(cnt, pinned, c: SignalConstraints, max_block: int) -> int:
    total = 0
    for b in (0, 1):
        if b == 1 and (pinned[0] or c.max_on_steps < 1 or max_block < 1):
            continue
        total += int(cnt[1, b, 1, 0, b])
    return total


def count(constraints: SignalConstraints) -> int:
    """Number of admissible signals, without materializing them."""
    cnt, pinned, max_block = _tables(constraints)
    return _root_count(cnt, pinned, constraints, max_block)


def enumerate_signals(constraints: SignalConstraints = SignalConstraints()) -> SignalSet:
    """All admissible signals in lexicographic order."""
    c = constraints
    cnt, pinned, max_block = _tables(c)
    n = _root_count(cnt, pinned, c, max_block)
    out = np.empty((n, c.horizon_steps), dtype=np.int8)
    k = _fill(cnt, c.horizon_steps, pinned, c.min_constant_steps, c.max_switches,
              min(c.max_on_steps, c.horizon_steps), max_block, out)
    assert k == n
    return SignalSet(out, c)


# the public name mirrors the operation; the builtin stays reachable as ``builtins.enumerate``
enumerate = enumerate_signals  # noqa: A001


def brute_force(constraints: SignalConstraints) -> np.ndarray:
    """Exhaustive filter over all ``2**horizon`` vectors; for small horizons only."""
    H = constraints.horizon_steps
    if H > 20:
        raise ValueError("brute force is limited to horizons of at most 20 steps")
    codes = np.arange(2**H, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(H - 1, -1, -1)) & 1).astype(np.int8)
    keep = np.fromiter((constraints.admits(b) for b in bits), dtype=bool, count=len(bits))
    return bits[keep]


def filter_by_off_budget(signals: SignalSet, max_off: int) -> SignalSet:
    """Keep signals with at most ``max_off`` forced-off steps (order preserved)."""
    if max_off < 0:
        raise ValueError("max_off must be non-negative")
    return signals[np.flatnonzero(signals.n_off_steps <= max_off)]
