"""Batch evaluation backends, NLL reductions, and the normalization cache.

The engine owns three responsibilities:

* splitting an event range into fixed blocks and mapping them over a serial
  loop or a thread pool (blocks are assigned by index, so the result is
  bitwise identical for any worker count);
* turning per-event densities into the negative log-likelihood with the
  deterministic two-level reduction from :mod:`parafit.reduction`;
* caching per-node normalization values keyed on parameter generations, so
  an objective call only recomputes the integrals whose parameters moved.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Mapping

import numpy as np

from .core import BinnedDataSet, ParameterSnapshot, UnbinnedDataSet, snapshot
from .errors import EmptyDataSet, NonPositiveDensity, NonPositiveExpectation
from .pdf import NormalizationValue, PdfNode, eval_batch, normalize_value
from .reduction import DEFAULT_BLOCK, block_sums

WORKERS_ENV = "PARAFIT_WORKERS"


class Backend:
    """Execution backend: `serial` or a `pool` of threads.

    The PARAFIT_WORKERS environment variable overrides the pool size
    (0 means the hardware thread count). `block` is the reduction block
    size and must be a power of two.
    """

    def __init__(self, mode: str = "serial", workers: int | None = None, block: int = DEFAULT_BLOCK):
        if mode not in ("serial", "pool"):
            raise ValueError(f"unknown backend mode {mode!r}")
        env = os.environ.get(WORKERS_ENV)
        if env is not None:
            workers = int(env)
        if workers is None or workers == 0:
            workers = os.cpu_count() or 1
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if block < 1 or block & (block - 1):
            raise ValueError("block must be a positive power of two")
        self.mode = mode
        self.workers = int(workers)
        self.block = int(block)
        self._executor: ThreadPoolExecutor | None = None

    def _pool(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.workers)
        return self._executor

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __repr__(self) -> str:
        if self.mode == "serial":
            return "Backend(serial)"
        return f"Backend(pool, workers={self.workers}, block={self.block})"

    # --- work splitting ----------------------------------------------------

    def chunk_ranges(self, n_events: int) -> list[tuple[int, int]]:
        """Contiguous block-aligned event ranges, one per worker chunk.

        Chunk boundaries fall on block edges so every chunk computes whole
        blocks; the chunk layout has no effect on any block's sum.
        """
        n_blocks = -(-n_events // self.block)
        n_chunks = 1 if self.mode == "serial" else min(self.workers, n_blocks)
        if n_chunks <= 0:
            return []
        base, extra = divmod(n_blocks, n_chunks)
        ranges = []
        b0 = 0
        for k in range(n_chunks):
            b1 = b0 + base + (1 if k < extra else 0)
            if b1 > b0:
                ranges.append((b0 * self.block, min(b1 * self.block, n_events)))
            b0 = b1
        return ranges

    def map(self, fn: Callable, args_list: list[tuple]) -> list:
        if self.mode == "serial" or self.workers == 1 or len(args_list) <= 1:
            return [fn(*args) for args in args_list]
        return list(self._pool().map(lambda args: fn(*args), args_list))


# --- normalization cache ------------------------------------------------------


class NormalizationStore:
    """Per-node normalization cache keyed on parameter generations.

    Besides the payloads themselves the store keeps instrumentation:
    `kernel_evals` counts actual integral computations (primitive
    quadratures / analytic forms, amplitude grid rows), `recompute_counts`
    counts per-node value recomputations. A warm pass over an unchanged
    tree leaves both untouched.
    """

    def __init__(self):
        self._entries: dict[object, tuple[tuple, object]] = {}
        self.kernel_evals = 0
        self.norm_computations = 0
        self.recompute_counts: dict[int, int] = defaultdict(int)

    def get(self, key) -> tuple[tuple, object] | None:
        return self._entries.get(key)

    def put(self, key, fingerprint: tuple, payload) -> None:
        self._entries[key] = (fingerprint, payload)

    def clear(self) -> None:
        self._entries.clear()


# Kinds with their own cached-normalization strategy (the Dalitz model keeps
# a pairwise integral matrix with per-term fingerprints) register here.
CACHED_NORM_HOOKS: dict[str, Callable] = {}


def register_cached_norm(kind: str, hook: Callable) -> None:
    CACHED_NORM_HOOKS[kind] = hook


def cached_norm(node: PdfNode, snap: ParameterSnapshot | None, store: NormalizationStore) -> NormalizationValue:
    """Cache-aware normalization: recompute only when generations moved.

    Cold and warm results are bitwise identical because the recompute path
    is the same pure function in both cases.
    """
    fp = node.fingerprint()
    cached = store.get(node.id)
    if cached is not None and cached[0] == fp:
        return NormalizationValue(cached[1], fp)
    child_norms = {c.id: cached_norm(c, snap, store).value for c in node.children}
    hook = CACHED_NORM_HOOKS.get(node.kind)
    if hook is not None:
        value = float(hook(node, snap, store))
    else:
        value = normalize_value(node, snap, child_norms)
        if not node.children:
            store.kernel_evals += 1
    store.norm_computations += 1
    store.recompute_counts[node.id] += 1
    store.put(node.id, fp, value)
    return NormalizationValue(value, fp)


def resolve_norms(root: PdfNode, snap: ParameterSnapshot | None, store: NormalizationStore) -> dict[int, float]:
    """Normalization values for every node of the tree, via the cache."""
    return {node.id: cached_norm(node, snap, store).value for node in root.walk()}


# --- NLL ------------------------------------------------------------------------


def _nll_terms(
    pdf: PdfNode,
    columns: Mapping[str, np.ndarray],
    snap: ParameterSnapshot | None,
    norms: Mapping[int, float],
    start: int,
    stop: int,
    offset: int = 0,
) -> np.ndarray:
    """-ln(p-hat) for events [start, stop); `offset` maps to global indices."""
    sliced = {name: col[start:stop] for name, col in columns.items()}
    dens = eval_batch(pdf, sliced, snap, norms)
    p = dens / norms[pdf.id]
    good = p > 0.0
    if not good.all():
        i = int(np.argmax(~good))
        raise NonPositiveDensity(offset + start + i, float(p[i]))
    return -np.log(p)


def nll_block_sums(
    pdf: PdfNode,
    columns: Mapping[str, np.ndarray],
    snap: ParameterSnapshot | None,
    norms: Mapping[int, float],
    start: int,
    stop: int,
    block: int,
    offset: int = 0,
) -> np.ndarray:
    """Fixed-block sums of -ln(p-hat) for a block-aligned event range."""
    terms = _nll_terms(pdf, columns, snap, norms, start, stop, offset)
    return block_sums(terms, block)


def _needed_columns(pdf: PdfNode, ds: UnbinnedDataSet) -> dict[str, np.ndarray]:
    needed = {name for node in pdf.walk() for name in node.observable_names()}
    available = ds.columns()
    missing = needed - set(available)
    if missing:
        raise KeyError(f"dataset lacks observables {sorted(missing)}")
    return {name: available[name] for name in sorted(needed)}


def nll(
    pdf: PdfNode,
    ds: UnbinnedDataSet,
    snap: ParameterSnapshot | None = None,
    backend: Backend | None = None,
    store: NormalizationStore | None = None,
) -> float:
    """Negative log-likelihood: -sum_i ln(eval(x_i) / norm).

    The log is taken per event, block sums use the fixed pairwise tree, and
    block sums are combined exactly, so serial and pool backends agree bit
    for bit regardless of the worker count.
    """
    if ds.n_events == 0:
        raise EmptyDataSet("cannot evaluate an NLL over zero events")
    backend = backend or Backend()
    store = store if store is not None else NormalizationStore()
    if snap is None:
        snap = snapshot(pdf.param_closure())
    norms = resolve_norms(pdf, snap, store)
    columns = _needed_columns(pdf, ds)
    ranges = backend.chunk_ranges(ds.n_events)
    chunks = backend.map(
        nll_block_sums,
        [(pdf, columns, snap, norms, start, stop, backend.block) for start, stop in ranges],
    )
    sums: list[float] = []
    for chunk in chunks:
        sums.extend(chunk.tolist())
    return math.fsum(sums)


def binned_nll(
    pdf: PdfNode,
    ds: BinnedDataSet,
    snap: ParameterSnapshot | None = None,
    backend: Backend | None = None,
    store: NormalizationStore | None = None,
) -> float:
    """Poisson NLL over bins: sum_b [nu_b - n_b ln nu_b], constants dropped.

    Expectations use the density at the bin center times the bin volume; a
    cheap, deterministic approximation documented as such.
    """
    total = ds.total
    if total <= 0:
        raise EmptyDataSet("binned dataset has no content")
    store = store if store is not None else NormalizationStore()
    if snap is None:
        snap = snapshot(pdf.param_closure())
    norms = resolve_norms(pdf, snap, store)
    centers = ds.centers()
    dens = eval_batch(pdf, centers, snap, norms) / norms[pdf.id]
    nu = total * dens * ds.bin_volume()
    counts = ds.contents
    observed = counts > 0
    bad = observed & ~(nu > 0.0)
    if bad.any():
        b = int(np.argmax(bad))
        raise NonPositiveExpectation(b, float(nu[b]))
    terms = nu.copy()
    terms[observed] -= counts[observed] * np.log(nu[observed])
    return math.fsum(terms.tolist())
