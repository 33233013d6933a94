"""Multiply-accumulate instrumentation.

One MAC is counted as one FLOP everywhere in this package: an n-token
d_in -> d_out linear costs n*d_in*d_out, not twice that. Only matrix
products and the attention-modulation Hadamard product are counted;
normalizations, activations, and other elementwise work are free by
convention. The counter is confined to one execution context at a time.
"""

from contextlib import contextmanager


class OpCounter:
    """Counts MACs observed since the last reset."""

    def __init__(self):
        self.mac_count = 0

    def add(self, n):
        if n < 0:
            raise ValueError("MAC increments must be non-negative")
        self.mac_count += int(n)

    def reset(self):
        self.mac_count = 0


_ACTIVE = None


def active_counter():
    return _ACTIVE


def add_macs(n):
    """Credit n MACs to the active counter, if any."""
    if _ACTIVE is not None:
        _ACTIVE.add(n)


@contextmanager
def counting(counter=None):
    """Make `counter` (a fresh one by default) the active MAC counter."""
    global _ACTIVE
    if counter is None:
        counter = OpCounter()
    prev = _ACTIVE
    _ACTIVE = counter
    try:
        yield counter
    finally:
        _ACTIVE = prev
