"""Three-body Dalitz-plot model: a coherent sum of resonance amplitudes.

The decay of a mother of mass M into daughters (1, 2, 3) is described in
the (s12, s13) plane of pairwise invariant masses squared; s23 is fixed by
energy-momentum conservation, s23 = M^2 + m1^2 + m2^2 + m3^2 - s12 - s13.
Each resonance contributes a fixed-width relativistic Breit-Wigner in its
pair mass, times a spin factor, weighted by a complex coefficient
magnitude * exp(i * phase). The observable density is the magnitude squared
of the coherent sum.

Normalization uses the pairwise overlap integrals I[i][j] = integral of
A_i * conj(A_j) over the kinematic boundary, computed on a deterministic
midpoint grid. The matrix is Hermitian by construction and is cached with
per-term fingerprints: only rows whose (mass, width, spin) moved are
recomputed, and coefficient changes never touch the matrix at all.

Conventions (declared, since there is no single standard):

* lineshape: BW(s) = 1 / (m^2 - s - i * m * width), no barrier factors,
  mass-independent width;
* spin 1 uses the linear Zemach factor, evaluated in the pair rest frame
  with the pair's first daughter as analyzer. For the pair (i, j) with
  bachelor k it reads s_ik - s_jk + (M^2 - m_k^2)(m_j^2 - m_i^2) / s_ij,
  which equals -4 * q * p * cos(theta_helicity) up to that frame's momenta.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import engine as _engine
from . import pdf as _pdf
from .core import ParameterSnapshot, Variable
from .errors import DegenerateGrid, NonPositiveNorm
from .pdf import PdfNode

PAIRS = (12, 13, 23)

DEFAULT_GRID = (400, 400)


@dataclass(frozen=True)
class DecayChannel:
    """Mother and daughter masses of a three-body decay, in GeV."""

    mother_mass: float
    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        daughters = self.m1 + self.m2 + self.m3
        if not (self.mother_mass > daughters >= 0.0):
            raise ValueError(
                f"need mother mass {self.mother_mass} > sum of daughters {daughters} >= 0"
            )

    @property
    def mass_sum_sq(self) -> float:
        """M^2 + m1^2 + m2^2 + m3^2; fixes s23 given (s12, s13)."""
        return self.mother_mass**2 + self.m1**2 + self.m2**2 + self.m3**2

    @property
    def s12_range(self) -> tuple[float, float]:
        return ((self.m1 + self.m2) ** 2, (self.mother_mass - self.m3) ** 2)

    @property
    def s13_range(self) -> tuple[float, float]:
        return ((self.m1 + self.m3) ** 2, (self.mother_mass - self.m2) ** 2)

    def s23(self, s12, s13):
        return self.mass_sum_sq - s12 - s13


@dataclass(frozen=True)
class DalitzPoint:
    s12: float
    s13: float


@dataclass
class ResonanceTerm:
    """One coherent-sum term: pair assignment, lineshape and coefficient."""

    pair: int
    mass: Variable
    width: Variable
    spin: int
    magnitude: Variable
    phase: Variable
    name: str = ""

    def __post_init__(self):
        if self.pair not in PAIRS:
            raise ValueError(f"pair must be one of {PAIRS}, got {self.pair}")
        if self.spin not in (0, 1):
            raise ValueError(f"spin must be 0 or 1, got {self.spin}")
        if not self.mass.value > 0:
            raise ValueError("resonance mass must be > 0")
        if not self.width.value > 0:
            raise ValueError("resonance width must be > 0")

    def shape_fingerprint(self) -> tuple:
        """Identifies the integrand of this term's overlap integrals."""
        return (
            self.pair,
            self.spin,
            self.mass.value,
            self.mass.generation,
            self.width.value,
            self.width.generation,
        )


def _pv(var: Variable, snap: ParameterSnapshot | None) -> float:
    return snap.value_of(var) if snap is not None else var.value


# --- kinematic boundary ---------------------------------------------------------


def s13_limits(s12, ch: DecayChannel):
    """Kinematic limits of s13 at fixed s12, from two-body energies in the
    (1,2) rest frame. Outside the valid s12 band the results are NaN."""
    s12 = np.asarray(s12, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        rs = np.sqrt(s12)
        e1 = (s12 + ch.m1**2 - ch.m2**2) / (2.0 * rs)
        e3 = (ch.mother_mass**2 - s12 - ch.m3**2) / (2.0 * rs)
        p1 = np.sqrt(e1 * e1 - ch.m1**2)
        p3 = np.sqrt(e3 * e3 - ch.m3**2)
        esum = (e1 + e3) ** 2
        lo = esum - (p1 + p3) ** 2
        hi = esum - (p1 - p3) ** 2
    return lo, hi


def in_boundary_mask(s12, s13, ch: DecayChannel) -> np.ndarray:
    s12 = np.asarray(s12, dtype=np.float64)
    s13 = np.asarray(s13, dtype=np.float64)
    lo12, hi12 = ch.s12_range
    lo, hi = s13_limits(s12, ch)
    with np.errstate(invalid="ignore"):
        ok = (s12 >= lo12) & (s12 <= hi12) & (s13 >= lo) & (s13 <= hi)
    return ok


def in_boundary(p: DalitzPoint | tuple, ch: DecayChannel) -> bool:
    """True iff the point lies inside the physical decay region."""
    s12, s13 = (p.s12, p.s13) if isinstance(p, DalitzPoint) else p
    return bool(in_boundary_mask(np.float64(s12), np.float64(s13), ch))


# --- amplitudes --------------------------------------------------------------------


def _pair_mass_sq(pair: int, s12, s13, ch: DecayChannel):
    if pair == 12:
        return s12
    if pair == 13:
        return s13
    return ch.s23(s12, s13)


def _zemach_spin1(pair: int, s12, s13, ch: DecayChannel):
    M2 = ch.mother_mass**2
    m1sq, m2sq, m3sq = ch.m1**2, ch.m2**2, ch.m3**2
    s23 = ch.s23(s12, s13)
    if pair == 12:
        return s13 - s23 + (M2 - m3sq) * (m2sq - m1sq) / s12
    if pair == 13:
        return s12 - s23 + (M2 - m2sq) * (m3sq - m1sq) / s13
    return s12 - s13 + (M2 - m1sq) * (m3sq - m2sq) / s23


def amplitude_values(
    term: ResonanceTerm,
    s12,
    s13,
    ch: DecayChannel,
    snap: ParameterSnapshot | None = None,
) -> np.ndarray:
    """Complex amplitude of one term at (s12, s13) arrays (coefficient excluded)."""
    s12 = np.asarray(s12, dtype=np.float64)
    s13 = np.asarray(s13, dtype=np.float64)
    m = _pv(term.mass, snap)
    width = _pv(term.width, snap)
    s = _pair_mass_sq(term.pair, s12, s13, ch)
    bw = 1.0 / (m * m - s - 1j * (m * width))
    if term.spin == 1:
        bw = bw * _zemach_spin1(term.pair, s12, s13, ch)
    return bw


def resonance_amplitude(
    term: ResonanceTerm,
    p: DalitzPoint | tuple,
    ch: DecayChannel,
    snap: ParameterSnapshot | None = None,
) -> complex:
    """Breit-Wigner times spin factor at one Dalitz point."""
    s12, s13 = (p.s12, p.s13) if isinstance(p, DalitzPoint) else p
    return complex(amplitude_values(term, np.float64(s12), np.float64(s13), ch, snap))


def coefficients(terms: Sequence[ResonanceTerm], snap: ParameterSnapshot | None = None) -> np.ndarray:
    mags = np.array([_pv(t.magnitude, snap) for t in terms], dtype=np.float64)
    phases = np.array([_pv(t.phase, snap) for t in terms], dtype=np.float64)
    return mags * np.exp(1j * phases)


def intensity_values(
    terms: Sequence[ResonanceTerm],
    s12,
    s13,
    ch: DecayChannel,
    snap: ParameterSnapshot | None = None,
) -> np.ndarray:
    """|sum_i c_i A_i|^2 over point arrays; the observable Dalitz density."""
    coeffs = coefficients(terms, snap)
    total = None
    for c, term in zip(coeffs, terms):
        contrib = c * amplitude_values(term, s12, s13, ch, snap)
        total = contrib if total is None else total + contrib
    return (total * np.conj(total)).real


def total_intensity(
    terms: Sequence[ResonanceTerm],
    p: DalitzPoint | tuple,
    ch: DecayChannel,
    snap: ParameterSnapshot | None = None,
) -> float:
    s12, s13 = (p.s12, p.s13) if isinstance(p, DalitzPoint) else p
    return float(intensity_values(terms, np.float64(s12), np.float64(s13), ch, snap))


# --- pairwise overlap integrals --------------------------------------------------------


def integration_grid(ch: DecayChannel, grid: tuple[int, int] = DEFAULT_GRID):
    """Midpoint grid over the (s12, s13) bounding box.

    Returns flattened center coordinates, the in-boundary mask, and the
    cell area. Rows scan s12, columns s13, row-major.
    """
    nx, ny = grid
    if nx < 32 or ny < 32:
        raise DegenerateGrid(f"need >= 32 nodes per axis, got {grid}")
    (lo12, hi12), (lo13, hi13) = ch.s12_range, ch.s13_range
    dx = (hi12 - lo12) / nx
    dy = (hi13 - lo13) / ny
    s12c = lo12 + (np.arange(nx) + 0.5) * dx
    s13c = lo13 + (np.arange(ny) + 0.5) * dy
    g12, g13 = np.meshgrid(s12c, s13c, indexing="ij")
    g12 = g12.reshape(-1)
    g13 = g13.reshape(-1)
    mask = in_boundary_mask(g12, g13, ch)
    return g12, g13, mask, dx * dy


@dataclass
class IntegralCache:
    """Hermitian matrix of pairwise overlap integrals with reuse metadata."""

    matrix: np.ndarray
    fingerprints: tuple[tuple, ...]
    grid: tuple[int, int]
    amplitudes: np.ndarray = field(repr=False, default=None)  # per-term grid values

    def __post_init__(self):
        n = len(self.fingerprints)
        if self.matrix.shape != (n, n):
            raise ValueError("integral matrix size does not match term count")


def compute_integrals(
    terms: Sequence[ResonanceTerm],
    ch: DecayChannel,
    grid: tuple[int, int] = DEFAULT_GRID,
    prior: IntegralCache | None = None,
    snap: ParameterSnapshot | None = None,
) -> IntegralCache:
    """Midpoint-rule overlap integrals over the kinematic boundary.

    Entries for a pair of terms whose shape fingerprints both match `prior`
    are copied over instead of recomputed; if nothing changed, `prior` is
    returned as-is. Coefficients (magnitude, phase) do not enter here.
    """
    fps = tuple(t.shape_fingerprint() for t in terms)
    if prior is not None and prior.grid == tuple(grid) and prior.fingerprints == fps:
        return prior
    g12, g13, mask, darea = integration_grid(ch, tuple(grid))
    p12 = g12[mask]
    p13 = g13[mask]
    n = len(terms)
    stale = [
        prior is None
        or prior.grid != tuple(grid)
        or i >= len(prior.fingerprints)
        or prior.fingerprints[i] != fps[i]
        or prior.amplitudes is None
        for i in range(n)
    ]
    amps = np.empty((n, p12.size), dtype=np.complex128)
    for i, term in enumerate(terms):
        if stale[i]:
            amps[i] = amplitude_values(term, p12, p13, ch, snap)
        else:
            amps[i] = prior.amplitudes[i]
    matrix = np.empty((n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(i, n):
            if not (stale[i] or stale[j]):
                val = prior.matrix[i, j]
            elif i == j:
                # |A|^2 summed as reals keeps the diagonal exactly real >= 0
                re, im = amps[i].real, amps[i].imag
                val = complex(float(np.sum(re * re + im * im)) * darea, 0.0)
            else:
                val = np.sum(amps[i] * np.conj(amps[j])) * darea
            matrix[i, j] = val
            matrix[j, i] = val.conjugate()
    return IntegralCache(matrix=matrix, fingerprints=fps, grid=tuple(grid), amplitudes=amps)


def dalitz_norm(
    terms: Sequence[ResonanceTerm],
    cache: IntegralCache,
    snap: ParameterSnapshot | None = None,
) -> float:
    """sum_ij c_i conj(c_j) I[i][j]; real and positive for a physical model."""
    if len(terms) != len(cache.fingerprints):
        raise ValueError("integral cache does not match the term list")
    c = coefficients(terms, snap)
    total = complex(np.dot(c, cache.matrix @ np.conj(c)))
    scale = max(abs(total.real), 1e-300)
    if abs(total.imag) > 1e-10 * scale:
        raise NonPositiveNorm(
            f"overlap sum has a non-negligible imaginary part: {total!r}"
        )
    if not total.real > 0.0:
        raise NonPositiveNorm(f"overlap sum {total.real!r} is not positive")
    return total.real


# --- PDF-tree integration -----------------------------------------------------------


def dalitz_pdf(
    terms: Sequence[ResonanceTerm],
    ch: DecayChannel,
    s12_obs: Variable | None = None,
    s13_obs: Variable | None = None,
    grid: tuple[int, int] = DEFAULT_GRID,
) -> PdfNode:
    """Wrap a coherent sum as a density node over (s12, s13) observables."""
    if not terms:
        raise ValueError("need at least one resonance term")
    if s12_obs is None:
        s12_obs = Variable.observable("s12", *ch.s12_range)
    if s13_obs is None:
        s13_obs = Variable.observable("s13", *ch.s13_range)
    params: list[Variable] = []
    for t in terms:
        params.extend((t.mass, t.width, t.magnitude, t.phase))
    return PdfNode(
        "dalitz",
        [s12_obs, s13_obs],
        params,
        payload=(tuple(terms), ch, tuple(grid)),
    )


def _dalitz_kernel(node, columns, snap, norms):
    terms, ch, _ = node.payload
    s12 = columns[node.observables[0].name]
    s13 = columns[node.observables[1].name]
    return intensity_values(terms, s12, s13, ch, snap)


def _dalitz_norm_pure(node, snap, child_norms):
    terms, ch, grid = node.payload
    cache = compute_integrals(terms, ch, grid, prior=None, snap=snap)
    return dalitz_norm(terms, cache, snap)


def _dalitz_cached_norm(node, snap, store):
    terms, ch, grid = node.payload
    key = ("dalitz-integrals", node.id)
    entry = store.get(key)
    prior = entry[1] if entry is not None else None
    cache = compute_integrals(terms, ch, grid, prior=prior, snap=snap)
    if cache is not prior:
        if prior is None or prior.grid != cache.grid:
            changed = len(cache.fingerprints)
        else:
            changed = sum(
                1
                for i, fp in enumerate(cache.fingerprints)
                if i >= len(prior.fingerprints) or prior.fingerprints[i] != fp
            )
        store.kernel_evals += changed
        store.put(key, cache.fingerprints, cache)
    return dalitz_norm(terms, cache, snap)


_pdf.register_kind("dalitz", _dalitz_kernel, _dalitz_norm_pure)
_engine.register_cached_norm("dalitz", _dalitz_cached_norm)


# --- model description files -------------------------------------------------------------


def load_dalitz_model(source) -> tuple[DecayChannel, list[ResonanceTerm]]:
    """Build a channel and resonance terms from a JSON description.

    `source` is a path, a JSON string, or an already-parsed mapping with
    layout::

        {"channel": {"mother_mass": M, "daughter_masses": [m1, m2, m3]},
         "resonances": [{"name": ..., "pair": 12, "mass": ..., "width": ...,
                         "spin": 0, "magnitude": ..., "phase": ...,
                         "fix_mass": true, "fix_width": true,
                         "fix_magnitude": false, "fix_phase": false}, ...]}
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            doc = json.loads(text)
        else:
            with open(text, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
    chan = doc["channel"]
    m1, m2, m3 = chan["daughter_masses"]
    ch = DecayChannel(float(chan["mother_mass"]), float(m1), float(m2), float(m3))
    terms = []
    for k, res in enumerate(doc["resonances"]):
        name = res.get("name", f"res{k}")
        mass = float(res["mass"])
        width = float(res["width"])
        mag = float(res["magnitude"])
        terms.append(
            ResonanceTerm(
                pair=int(res["pair"]),
                mass=Variable(
                    f"{name}_mass", mass, lower=mass * 0.5, upper=mass * 1.5,
                    step=mass * 0.001, fixed=bool(res.get("fix_mass", True)),
                ),
                width=Variable(
                    f"{name}_width", width, lower=width * 0.1, upper=width * 10.0,
                    step=width * 0.01, fixed=bool(res.get("fix_width", True)),
                ),
                spin=int(res.get("spin", 0)),
                magnitude=Variable(
                    f"{name}_magnitude", mag, lower=0.0,
                    upper=max(10.0 * abs(mag), 10.0), step=0.01,
                    fixed=bool(res.get("fix_magnitude", False)),
                ),
                phase=Variable(
                    f"{name}_phase", float(res["phase"]),
                    lower=-2.0 * math.pi, upper=2.0 * math.pi, step=0.01,
                    fixed=bool(res.get("fix_phase", False)),
                ),
                name=name,
            )
        )
    return ch, terms
