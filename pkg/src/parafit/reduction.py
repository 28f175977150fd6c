"""Deterministic floating-point reduction.

The likelihood sum is organized in two levels:

1. Events are grouped into fixed blocks (by index, independent of the worker
   layout). Each full block is summed with a half-folding pairwise tree; the
   ragged tail block uses a split-recursion pairwise tree. A block's sum
   depends only on the block's contents, never on who computed it.

2. Block sums are combined exactly: an error-free running accumulation keeps
   the sum as a list of non-overlapping doubles (Shewchuk-style partials,
   the same representation ``math.fsum`` uses), rounded to one double only
   at the very end. Because level two is exact, regrouping blocks into any
   number of contiguous shards and re-accumulating their partial expansions
   reproduces the total bit for bit.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

DEFAULT_BLOCK = 4096


def fold_halves_matrix(mat: np.ndarray) -> np.ndarray:
    """Per-row sums of an (m, 2**k) matrix by repeated half folding.

    Row i's result is the fixed binary tree pairing element j with
    j + width/2 at every level; vectorized so each fold is one addition.
    """
    if mat.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    width = mat.shape[1]
    if width & (width - 1):
        raise ValueError("row width must be a power of two")
    while mat.shape[1] > 1:
        half = mat.shape[1] // 2
        mat = mat[:, :half] + mat[:, half:]
    return mat[:, 0]


def pairwise_sum_1d(a: np.ndarray) -> float:
    """Split-recursion pairwise sum for a ragged (non power-of-two) slice."""
    n = len(a)
    if n == 0:
        return 0.0
    if n <= 8:
        s = float(a[0])
        for k in range(1, n):
            s += float(a[k])
        return s
    half = n // 2
    return pairwise_sum_1d(a[:half]) + pairwise_sum_1d(a[half:])


def block_sums(terms: np.ndarray, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Fixed-block sums of a 1-D term array.

    Full blocks are folded as a matrix; the tail block (if any) by the 1-D
    pairwise routine. Identical input slices give identical sums on every
    call path, which is what the worker-count invariance rests on.
    """
    if block < 1 or block & (block - 1):
        raise ValueError("block size must be a positive power of two")
    n = len(terms)
    n_full = n // block
    out = np.empty(n_full + (1 if n % block else 0), dtype=np.float64)
    if n_full:
        out[:n_full] = fold_halves_matrix(terms[: n_full * block].reshape(n_full, block))
    if n % block:
        out[n_full] = pairwise_sum_1d(terms[n_full * block:])
    return out


class ExactAccumulator:
    """Error-free running sum kept as non-overlapping partials.

    ``add`` performs Shewchuk's grow-expansion step; the list of partials
    always sums (in exact real arithmetic) to exactly the values added so
    far. ``partials`` can be shipped elsewhere and merged into another
    accumulator without losing a single bit.
    """

    __slots__ = ("_partials",)

    def __init__(self, values: Iterable[float] = ()):
        self._partials: list[float] = []
        for v in values:
            self.add(v)

    def add(self, x: float) -> None:
        partials = self._partials
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]

    def extend(self, values: Iterable[float]) -> None:
        for v in values:
            self.add(v)

    @property
    def partials(self) -> tuple[float, ...]:
        return tuple(self._partials)

    def round(self) -> float:
        """Correctly rounded value of the exact sum."""
        return math.fsum(self._partials)


def exact_partials(values: Sequence[float]) -> tuple[float, ...]:
    """Non-overlapping expansion whose exact sum equals the exact sum of `values`."""
    acc = ExactAccumulator(values)
    return acc.partials


def round_exact(partial_lists: Iterable[Sequence[float]]) -> float:
    """Correctly rounded total of several expansions, merged exactly.

    Feeding the concatenated components through ``math.fsum`` rounds the
    exact real total once; any grouping of the same components gives the
    same bits.
    """
    flat: list[float] = []
    for parts in partial_lists:
        flat.extend(parts)
    return math.fsum(flat)
