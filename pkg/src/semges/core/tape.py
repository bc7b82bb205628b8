"""Record/replay of non-differentiable decisions.

Finite-difference oracles for losses containing stop-gradients or argmin
selections must differentiate the *surrogate* function in which those
operands are held at their base-point values. A ``DecisionTape`` records
every such value on a first evaluation and hands them back, in order, on
later evaluations.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_local = threading.local()


class DecisionTape:
    def __init__(self):
        self.values: list[np.ndarray] = []
        self._cursor = 0
        self._mode = "record"

    def take(self, value: np.ndarray) -> np.ndarray:
        if self._mode == "record":
            self.values.append(np.array(value, copy=True))
            return value
        if self._cursor >= len(self.values):
            raise RuntimeError("replay requested more decisions than were recorded")
        stored = self.values[self._cursor]
        self._cursor += 1
        if stored.shape != np.shape(value):
            raise RuntimeError("replayed decision has a different shape than recorded")
        return stored

    @contextmanager
    def replay(self):
        prev = getattr(_local, "tape", None)
        self._mode, self._cursor = "replay", 0
        _local.tape = self
        try:
            yield self
        finally:
            _local.tape = prev
            if self._cursor != len(self.values):
                raise RuntimeError(
                    f"replay consumed {self._cursor} of {len(self.values)} recorded decisions"
                )


@contextmanager
def record_decisions():
    """Record stop-gradient operands and discrete choices made inside the block."""
    tape = DecisionTape()
    prev = getattr(_local, "tape", None)
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


def replaying() -> bool:
    tape = getattr(_local, "tape", None)
    return tape is not None and tape._mode == "replay"


def decide(value: np.ndarray) -> np.ndarray:
    """Pass ``value`` through the active tape, if any."""
    tape = getattr(_local, "tape", None)
    if tape is None:
        return value
    return tape.take(value)
