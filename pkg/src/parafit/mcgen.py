"""Toy Monte Carlo generation by accept-reject sampling.

One-dimensional models are sampled against a flat envelope set to a safety
factor times the maximum density found on a scan grid. Dalitz models are
sampled uniformly over the (s12, s13) bounding box, with out-of-boundary
points discarded first (uniformity in these variables *is* flat three-body
phase space, so no Jacobian reweighting is needed) and the intensity
accept-reject applied after.

Randomness comes from numpy's PCG64 generator; per-stream seeds are derived
with numpy's SeedSequence spawning, so parallel streams are reproducible.
Sequences are stable for a fixed seed within one build of this library;
bit-compatibility across implementations is explicitly not promised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import UnbinnedDataSet, Variable
from .dalitz import DecayChannel, ResonanceTerm, in_boundary_mask, intensity_values
from .errors import AttemptsExhausted, EnvelopeExceeded, UnboundedObservable
from .pdf import PdfNode, eval_batch, normalize

SCAN_POINTS = 4096
RESCAN_POINTS = 4 * SCAN_POINTS
CHUNK = 8192


@dataclass(frozen=True)
class GenSpec:
    """How many events to draw, from which seed, under which safety margins."""

    n_events: int
    seed: int = 0
    envelope_safety: float = 1.1
    max_attempts_factor: int = 1000
    streams: int = 1

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        if self.envelope_safety < 1.0:
            raise ValueError("envelope_safety must be >= 1")
        if self.streams < 1:
            raise ValueError("streams must be >= 1")


def _scan_max(density: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, points: int) -> float:
    xs = lo + (np.arange(points) + 0.5) * ((hi - lo) / points)
    return float(np.max(density(xs)))


def _stream_rngs(spec: GenSpec) -> list[np.random.Generator]:
    seq = np.random.SeedSequence(spec.seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(spec.streams)]


def _split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


def _accept_reject_1d(
    density: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    n_wanted: int,
    rng: np.random.Generator,
    envelope: float,
    budget: int,
    stats: dict,
) -> np.ndarray:
    out: list[np.ndarray] = []
    got = 0
    attempts = 0
    while got < n_wanted:
        if attempts >= budget:
            raise AttemptsExhausted(f"{attempts} draws produced only {got}/{n_wanted} events")
        k = min(CHUNK, budget - attempts)
        xs = rng.uniform(lo, hi, size=k)
        us = rng.uniform(0.0, envelope, size=k)
        dens = density(xs)
        attempts += k
        if (dens > envelope).any():
            raise _EnvelopeHit(float(np.max(dens)))
        keep = us < dens
        if keep.any():
            out.append(xs[keep])
            got += int(keep.sum())
    stats["attempts"] = stats.get("attempts", 0) + attempts
    stats["accepted"] = stats.get("accepted", 0) + got
    return np.concatenate(out)[:n_wanted]


class _EnvelopeHit(Exception):
    def __init__(self, observed: float):
        self.observed = observed


def generate_1d(
    pdf: PdfNode, obs: Variable, spec: GenSpec, stats: dict | None = None
) -> UnbinnedDataSet:
    """Draw exactly `spec.n_events` samples of a one-dimensional density.

    The envelope is `envelope_safety` times the densest point of a midpoint
    scan; if sampling still finds a higher density the envelope is rescanned
    once (finer grid, observed maximum included) before giving up.
    """
    lo, hi = obs.lower, obs.upper
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise UnboundedObservable(f"{obs.name!r} needs finite bounds for generation")
    norms = {n.id: normalize(n).value for n in pdf.walk() if n is not pdf} if pdf.children else None

    def density(xs: np.ndarray) -> np.ndarray:
        return eval_batch(pdf, {obs.name: xs}, None, norms)

    envelope = spec.envelope_safety * _scan_max(density, lo, hi, SCAN_POINTS)
    budget = spec.max_attempts_factor * spec.n_events
    stats = stats if stats is not None else {}
    for attempt in range(2):
        try:
            stats.clear()
            stats["envelope"] = envelope
            samples = _generate_streams(density, lo, hi, spec, envelope, budget, stats)
            break
        except _EnvelopeHit as hit:
            if attempt == 1:
                raise EnvelopeExceeded(
                    f"density {hit.observed} exceeded envelope {envelope} after a rescan"
                ) from None
            rescanned = _scan_max(density, lo, hi, RESCAN_POINTS)
            envelope = spec.envelope_safety * max(rescanned, hit.observed)
    ds = UnbinnedDataSet([obs])
    ds.extend([samples])
    return ds


def _generate_streams(
    density, lo, hi, spec: GenSpec, envelope: float, budget: int, stats: dict
) -> np.ndarray:
    rngs = _stream_rngs(spec)
    counts = _split_counts(spec.n_events, spec.streams)
    budgets = _split_counts(budget, spec.streams)
    parts = [
        _accept_reject_1d(density, lo, hi, cnt, rng, envelope, bud, stats)
        for rng, cnt, bud in zip(rngs, counts, budgets)
        if cnt > 0
    ]
    return np.concatenate(parts)


def generate_dalitz(
    terms: Sequence[ResonanceTerm],
    ch: DecayChannel,
    spec: GenSpec,
    observables: tuple[Variable, Variable] | None = None,
    stats: dict | None = None,
) -> UnbinnedDataSet:
    """Draw Dalitz-plot events: flat phase space filtered by the intensity.

    Candidate points are uniform over the (s12, s13) bounding box; points
    outside the kinematic boundary are discarded (that rejection alone
    produces flat phase space), then the coherent-sum intensity accept-reject
    runs on the survivors. Every returned point lies inside the boundary.
    """
    if not terms:
        raise ValueError("need at least one resonance term")
    if observables is None:
        observables = (
            Variable.observable("s12", *ch.s12_range),
            Variable.observable("s13", *ch.s13_range),
        )
    (lo12, hi12), (lo13, hi13) = ch.s12_range, ch.s13_range

    g12, g13, mask, _ = _dalitz_scan_grid(ch, 512)
    envelope = spec.envelope_safety * _masked_intensity_max(terms, ch, g12, g13, mask)
    budget = spec.max_attempts_factor * spec.n_events

    stats = stats if stats is not None else {}
    for attempt in range(2):
        try:
            stats.clear()
            stats["envelope"] = envelope
            s12s, s13s = _dalitz_streams(terms, ch, spec, envelope, budget,
                                         lo12, hi12, lo13, hi13, stats)
            break
        except _EnvelopeHit as hit:
            if attempt == 1:
                raise EnvelopeExceeded(
                    f"intensity {hit.observed} exceeded envelope {envelope} after a rescan"
                ) from None
            g12, g13, mask, _ = _dalitz_scan_grid(ch, 2048)
            finer = _masked_intensity_max(terms, ch, g12, g13, mask)
            envelope = spec.envelope_safety * max(finer, hit.observed)

    ds = UnbinnedDataSet(list(observables))
    ds.extend([s12s, s13s])
    return ds


def _dalitz_scan_grid(ch: DecayChannel, n: int):
    (lo12, hi12), (lo13, hi13) = ch.s12_range, ch.s13_range
    dx, dy = (hi12 - lo12) / n, (hi13 - lo13) / n
    a = lo12 + (np.arange(n) + 0.5) * dx
    b = lo13 + (np.arange(n) + 0.5) * dy
    g12, g13 = np.meshgrid(a, b, indexing="ij")
    g12, g13 = g12.reshape(-1), g13.reshape(-1)
    return g12, g13, in_boundary_mask(g12, g13, ch), dx * dy


def _masked_intensity_max(terms, ch, g12, g13, mask) -> float:
    vals = intensity_values(terms, g12[mask], g13[mask], ch)
    return float(np.max(vals)) if vals.size else 0.0


def _dalitz_streams(terms, ch, spec, envelope, budget, lo12, hi12, lo13, hi13, stats):
    rngs = _stream_rngs(spec)
    counts = _split_counts(spec.n_events, spec.streams)
    budgets = _split_counts(budget, spec.streams)
    all12: list[np.ndarray] = []
    all13: list[np.ndarray] = []
    for rng, cnt, bud in zip(rngs, counts, budgets):
        if cnt <= 0:
            continue
        got = 0
        attempts = 0
        while got < cnt:
            if attempts >= bud:
                raise AttemptsExhausted(
                    f"{attempts} draws produced only {got}/{cnt} events in one stream"
                )
            k = min(CHUNK, bud - attempts)
            c12 = rng.uniform(lo12, hi12, size=k)
            c13 = rng.uniform(lo13, hi13, size=k)
            us = rng.uniform(0.0, envelope, size=k)
            attempts += k
            inside = in_boundary_mask(c12, c13, ch)
            dens = np.zeros(k)
            if inside.any():
                dens[inside] = intensity_values(terms, c12[inside], c13[inside], ch)
            if (dens > envelope).any():
                raise _EnvelopeHit(float(np.max(dens)))
            keep = us < dens
            take = min(int(keep.sum()), cnt - got)
            if take:
                all12.append(c12[keep][:take])
                all13.append(c13[keep][:take])
                got += take
            stats["box_draws"] = stats.get("box_draws", 0) + k
            stats["in_boundary_draws"] = stats.get("in_boundary_draws", 0) + int(inside.sum())
        stats["accepted"] = stats.get("accepted", 0) + got
    return np.concatenate(all12), np.concatenate(all13)
