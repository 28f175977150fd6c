"""Dataset sharding, partial NLL sums, and the worker wire protocol.

A dataset is split into contiguous shards, one per worker; each worker sums
-ln(p-hat) over its shard with the engine's fixed-block reduction and ships
back a :class:`PartialSum`. A partial keeps the exact non-overlapping
expansion of its sum (not just one rounded double), so the driver-side
reduction reproduces the single-process NLL bit for bit whenever shard
boundaries fall on block edges.

The optional multi-process transport frames messages as::

    u32 payload length (bytes, little endian) | u8 tag | payload

with payload a sequence of little-endian binary64 values. Tags: 1 parameter
snapshot, 2 partial sum, 3 shutdown. In-process workers remain the baseline;
the socket path lets true multi-process deployments speak the same protocol
over any stream transport.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ParameterSnapshot, UnbinnedDataSet, set_value
from .engine import NormalizationStore, nll_block_sums, resolve_norms
from .errors import DuplicateShard, MissingShard, ProtocolError
from .pdf import PdfNode
from .reduction import DEFAULT_BLOCK, ExactAccumulator, round_exact

TAG_PARAM_SNAPSHOT = 1
TAG_PARTIAL_SUM = 2
TAG_SHUTDOWN = 3


@dataclass(frozen=True)
class Shard:
    """A contiguous slice [begin, end) of the event set with column views."""

    index: int
    begin: int
    end: int
    columns: Mapping[str, np.ndarray]

    @property
    def size(self) -> int:
        return self.end - self.begin


@dataclass(frozen=True)
class PartialSum:
    """One shard's contribution: rounded sum plus its exact expansion."""

    shard_index: int
    count: int
    sum: float
    components: tuple[float, ...] = ()

    @classmethod
    def from_components(cls, shard_index: int, count: int, components: Sequence[float]) -> "PartialSum":
        return cls(shard_index, count, math.fsum(components), tuple(components))


def shard(ds: UnbinnedDataSet, workers: int, block: int = DEFAULT_BLOCK) -> list[Shard]:
    """Split a dataset into `workers` contiguous shards.

    The even ceiling/floor split is aligned down to the reduction block size
    whenever every worker can hold at least one full block (n >= W * block);
    aligned boundaries are what make the distributed total bitwise equal to
    the serial one. Smaller datasets split evenly but unaligned.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n = ds.n_events
    columns = ds.columns() if n else {o.name: np.empty(0) for o in ds.observables}
    base, extra = divmod(n, workers)
    bounds = [0]
    for k in range(workers):
        bounds.append(bounds[-1] + base + (1 if k < extra else 0))
    if n >= workers * block:
        bounds = [0] + [(b // block) * block for b in bounds[1:-1]] + [n]
    shards = []
    for k in range(workers):
        begin, end = bounds[k], bounds[k + 1]
        views = {name: col[begin:end] for name, col in columns.items()}
        shards.append(Shard(index=k, begin=begin, end=end, columns=views))
    return shards


def partial_nll(
    sh: Shard,
    pdf: PdfNode,
    snap: ParameterSnapshot | None,
    norms: Mapping[int, float] | None = None,
    block: int = DEFAULT_BLOCK,
) -> PartialSum:
    """Block-pairwise sum of -ln(p-hat) over one shard.

    The driver resolves normalization caches before dispatch and passes the
    values in `norms`; as a convenience they are recomputed locally when
    omitted.
    """
    if norms is None:
        store = NormalizationStore()
        norms = resolve_norms(pdf, snap, store)
    if sh.size == 0:
        return PartialSum(sh.index, 0, 0.0, ())
    sums = nll_block_sums(pdf, sh.columns, snap, norms, 0, sh.size, block, offset=sh.begin)
    acc = ExactAccumulator(sums.tolist())
    return PartialSum.from_components(sh.index, sh.size, acc.partials)


def reduce_partials(partials: Sequence[PartialSum]) -> float:
    """Combine shard partials into the total NLL.

    Requires every shard index 0..W-1 exactly once; sums in ascending shard
    order. The exact expansions merge without rounding, so the result equals
    the single-process total whenever the shards were block-aligned.
    """
    seen = sorted(partials, key=lambda p: p.shard_index)
    indices = [p.shard_index for p in seen]
    for k, idx in enumerate(indices):
        if indices.count(idx) > 1:
            raise DuplicateShard(f"shard index {idx} appears more than once")
        if idx != k:
            raise MissingShard(f"expected shard index {k}, found {idx}")
    return round_exact([p.components if p.components else (p.sum,) for p in seen])


def sharded_nll(
    pdf: PdfNode,
    ds: UnbinnedDataSet,
    snap: ParameterSnapshot | None = None,
    workers: int = 1,
    store: NormalizationStore | None = None,
    block: int = DEFAULT_BLOCK,
) -> float:
    """Driver-side convenience: shard, evaluate partials, reduce."""
    store = store if store is not None else NormalizationStore()
    norms = resolve_norms(pdf, snap, store)
    parts = [partial_nll(sh, pdf, snap, norms, block) for sh in shard(ds, workers, block)]
    return reduce_partials(parts)


# --- wire protocol ------------------------------------------------------------------


def encode_frame(tag: int, values: Sequence[float]) -> bytes:
    payload = struct.pack(f"<{len(values)}d", *values)
    return struct.pack("<IB", len(payload), tag) + payload


def decode_frame(buffer: bytes) -> tuple[int, tuple[float, ...], bytes]:
    """Decode one frame from `buffer`; returns (tag, values, remainder)."""
    if len(buffer) < 5:
        raise ProtocolError("frame header truncated")
    (length, tag) = struct.unpack_from("<IB", buffer)
    end = 5 + length
    if len(buffer) < end:
        raise ProtocolError("frame payload truncated")
    if length % 8:
        raise ProtocolError(f"payload length {length} is not a multiple of 8")
    values = struct.unpack_from(f"<{length // 8}d", buffer, 5)
    return tag, values, buffer[end:]


def read_frame(sock) -> tuple[int, tuple[float, ...]]:
    """Read exactly one frame from a stream socket."""
    header = _read_exact(sock, 5)
    (length, tag) = struct.unpack("<IB", header)
    if length % 8:
        raise ProtocolError(f"payload length {length} is not a multiple of 8")
    payload = _read_exact(sock, length)
    return tag, struct.unpack(f"<{length // 8}d", payload)


def _read_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def encode_snapshot(snap: ParameterSnapshot) -> bytes:
    values = [float(len(snap))]
    values.extend(snap.values)
    values.extend(float(g) for g in snap.generations)
    return encode_frame(TAG_PARAM_SNAPSHOT, values)


def decode_snapshot(values: Sequence[float], names: Sequence[str]) -> ParameterSnapshot:
    n = int(values[0])
    if len(values) != 1 + 2 * n or len(names) != n:
        raise ProtocolError("snapshot payload size mismatch")
    return ParameterSnapshot(
        names=tuple(names),
        values=tuple(values[1 : 1 + n]),
        generations=tuple(int(g) for g in values[1 + n :]),
    )


def encode_partial(p: PartialSum) -> bytes:
    values = [float(p.shard_index), float(p.count), float(len(p.components))]
    values.extend(p.components)
    return encode_frame(TAG_PARTIAL_SUM, values)


def decode_partial(values: Sequence[float]) -> PartialSum:
    if len(values) < 3:
        raise ProtocolError("partial-sum payload too short")
    n_comp = int(values[2])
    if len(values) != 3 + n_comp:
        raise ProtocolError("partial-sum component count mismatch")
    components = tuple(values[3:])
    return PartialSum.from_components(int(values[0]), int(values[1]), components)


def serve_shard(sock, sh: Shard, pdf: PdfNode, names: Sequence[str], block: int = DEFAULT_BLOCK) -> None:
    """Minimal worker loop: snapshots in, partial sums out, until shutdown.

    Each snapshot is applied by resolving normalizations locally (the same
    pure computation the driver would run), so a remote worker needs only
    the shard data and the model structure.
    """
    free = [p for p in pdf.param_closure() if not p.fixed]
    by_name = {p.name: p for p in free}
    store = NormalizationStore()
    while True:
        tag, values = read_frame(sock)
        if tag == TAG_SHUTDOWN:
            return
        if tag != TAG_PARAM_SNAPSHOT:
            raise ProtocolError(f"unexpected frame tag {tag}")
        snap = decode_snapshot(values, names)
        for name, value in zip(snap.names, snap.values):
            if name in by_name:
                set_value(by_name[name], value)
        norms = resolve_norms(pdf, snap, store)
        part = partial_nll(sh, pdf, snap, norms, block)
        sock.sendall(encode_partial(part))
