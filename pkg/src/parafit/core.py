"""Variables, datasets, and the parameter registry.

A :class:`Variable` is a named real quantity: either an observable (a data
dimension with a valid range) or a parameter (a fitted quantity with bounds
and a finite-difference step).  Every value change bumps a monotone
generation counter, which is what the normalization caches key on.

Datasets store events column-major: one contiguous float64 array per
observable, so evaluation kernels stream each dimension independently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateName,
    IndexOutOfRange,
    OutOfBounds,
    OutOfRange,
    ShapeMismatch,
    UnknownObservable,
)

OBSERVABLE = "observable"
PARAMETER = "parameter"


def _default_step(value: float, lower: float, upper: float) -> float:
    if math.isfinite(lower) and math.isfinite(upper):
        return (upper - lower) / 100.0
    if value != 0.0 and math.isfinite(value):
        return abs(value) / 10.0
    return 0.01


class Variable:
    """A named real quantity used as an observable or a fit parameter.

    Parameters
    ----------
    name : str
        Identifier; unique within one registry.
    value : float
        Current value. Must lie within [lower, upper] when bounds are finite.
    lower, upper : float
        Allowed range. Defaults are infinite (unbounded).
    step : float, optional
        Finite-difference / initial step. Derived from the bounds or the
        value when omitted. Must be > 0 for non-fixed parameters.
    fixed : bool
        Fixed parameters are not varied by the minimizer.
    kind : str
        ``"parameter"`` or ``"observable"``.
    """

    __slots__ = ("name", "_value", "lower", "upper", "step", "fixed", "kind", "_generation", "error")

    def __init__(
        self,
        name: str,
        value: float = 0.0,
        lower: float = -math.inf,
        upper: float = math.inf,
        step: float | None = None,
        fixed: bool = False,
        kind: str = PARAMETER,
    ):
        if kind not in (OBSERVABLE, PARAMETER):
            raise ValueError(f"unknown variable kind {kind!r}")
        if not lower <= upper:
            raise ValueError(f"variable {name!r}: lower {lower} > upper {upper}")
        value = float(value)
        if kind == PARAMETER and not (lower <= value <= upper):
            raise OutOfBounds(f"{name!r}: starting value {value} outside [{lower}, {upper}]")
        self.name = name
        self._value = value
        self.lower = float(lower)
        self.upper = float(upper)
        self.step = float(step) if step is not None else _default_step(value, lower, upper)
        self.fixed = bool(fixed)
        self.kind = kind
        self._generation = 0
        self.error = 0.0  # filled in by a converged fit
        if not self.fixed and kind == PARAMETER and not self.step > 0.0:
            raise ValueError(f"{name!r}: step must be > 0 for a floating parameter")

    @classmethod
    def observable(cls, name: str, lower: float = -math.inf, upper: float = math.inf) -> "Variable":
        """Shorthand for a data dimension with a valid range."""
        mid = 0.5 * (lower + upper) if math.isfinite(lower) and math.isfinite(upper) else 0.0
        return cls(name, value=mid, lower=lower, upper=upper, kind=OBSERVABLE)

    @property
    def value(self) -> float:
        return self._value

    @value.setter
    def value(self, x: float) -> None:
        set_value(self, x)

    @property
    def generation(self) -> int:
        """Monotone change counter; bumps exactly when the stored value changes."""
        return self._generation

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) or math.isfinite(self.upper)

    def __repr__(self) -> str:
        flags = []
        if self.fixed:
            flags.append("fixed")
        if self.kind == OBSERVABLE:
            flags.append("obs")
        tail = " " + ",".join(flags) if flags else ""
        return f"Variable({self.name}={self._value!r} in [{self.lower}, {self.upper}]{tail})"


def set_value(var: Variable, x: float) -> Variable:
    """Assign a new value, bumping the generation only on an actual change.

    Bitwise-equal assignments are not changes: a line search revisiting a
    point must not invalidate caches. Bounded parameters reject values
    outside their range without mutating anything.
    """
    x = float(x)
    if var.kind == PARAMETER and not (var.lower <= x <= var.upper):
        raise OutOfBounds(f"{var.name!r}: {x} outside [{var.lower}, {var.upper}]")
    if math.isnan(x):
        raise OutOfBounds(f"{var.name!r}: NaN is not a valid value")
    old = var._value
    if x != old or math.copysign(1.0, x) != math.copysign(1.0, old):
        var._value = x
        var._generation += 1
    return var


@dataclass(frozen=True)
class ParameterSnapshot:
    """Immutable capture of parameter values and generations in registry order."""

    names: tuple[str, ...]
    values: tuple[float, ...]
    generations: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.values) == len(self.generations)):
            raise ShapeMismatch("snapshot fields must have equal lengths")

    def value_of(self, var: Variable) -> float:
        """Value for `var` at snapshot time; falls back to the live value for
        variables outside the snapshot (fixed parameters, observables)."""
        try:
            return self.values[self.names.index(var.name)]
        except ValueError:
            return var.value

    def __len__(self) -> int:
        return len(self.names)


class ParameterRegistry:
    """Ordered collection of uniquely named variables."""

    def __init__(self, variables: Iterable[Variable] = ()):
        self._vars: dict[str, Variable] = {}
        for v in variables:
            self.register(v)

    def register(self, var: Variable) -> Variable:
        existing = self._vars.get(var.name)
        if existing is var:
            return var
        if existing is not None:
            raise DuplicateName(f"variable name {var.name!r} already registered")
        self._vars[var.name] = var
        return var

    def __iter__(self):
        return iter(self._vars.values())

    def __len__(self) -> int:
        return len(self._vars)

    def __contains__(self, name: str) -> bool:
        return name in self._vars

    def get(self, name: str) -> Variable:
        try:
            return self._vars[name]
        except KeyError:
            raise UnknownObservable(f"no variable named {name!r}") from None

    def free_parameters(self) -> list[Variable]:
        return [v for v in self._vars.values() if v.kind == PARAMETER and not v.fixed]


def snapshot(registry: ParameterRegistry | Iterable[Variable]) -> ParameterSnapshot:
    """Capture all non-fixed parameter values and generations, in registry order."""
    free = [v for v in registry if v.kind == PARAMETER and not v.fixed]
    return ParameterSnapshot(
        names=tuple(v.name for v in free),
        values=tuple(v.value for v in free),
        generations=tuple(v.generation for v in free),
    )


class UnbinnedDataSet:
    """Column-major event storage bound to a fixed list of observables.

    In strict mode (the default) out-of-range rows raise; in lenient mode
    they are dropped with a warning and counted in ``rejected_count``.
    Loading data that silently falls outside the model's range is a classic
    way to bias a fit, so failing loudly is the default.
    """

    def __init__(self, observables: Sequence[Variable], lenient: bool = False):
        if not observables:
            raise ShapeMismatch("a dataset needs at least one observable")
        names = [o.name for o in observables]
        if len(set(names)) != len(names):
            raise DuplicateName(f"duplicate observable names: {names}")
        self.observables: tuple[Variable, ...] = tuple(observables)
        self.lenient = bool(lenient)
        self.rejected_count = 0
        self._lists: list[list[float]] = [[] for _ in observables]
        self._arrays: list[np.ndarray] | None = None

    # --- loading ---------------------------------------------------------

    def add_event(self, row: Sequence[float]) -> None:
        """Append one row; validates length and per-observable range."""
        if len(row) != len(self.observables):
            raise ShapeMismatch(
                f"row has {len(row)} values, dataset has {len(self.observables)} observables"
            )
        vals = [float(x) for x in row]
        for i, (obs, x) in enumerate(zip(self.observables, vals)):
            if not (obs.lower <= x <= obs.upper) or not math.isfinite(x):
                if self.lenient:
                    self.rejected_count += 1
                    warnings.warn(
                        f"dropped row: {obs.name}={x} outside [{obs.lower}, {obs.upper}]",
                        stacklevel=2,
                    )
                    return
                raise OutOfRange(i, x, obs.name)
        for store, x in zip(self._lists, vals):
            store.append(x)
        self._arrays = None

    def extend(self, columns: Sequence[np.ndarray]) -> None:
        """Bulk append pre-built columns (vectorized range check)."""
        if len(columns) != len(self.observables):
            raise ShapeMismatch("column count does not match observables")
        cols = [np.asarray(c, dtype=np.float64) for c in columns]
        n = len(cols[0])
        if any(len(c) != n for c in cols):
            raise ShapeMismatch("columns have unequal lengths")
        keep = np.ones(n, dtype=bool)
        for i, (obs, c) in enumerate(zip(self.observables, cols)):
            bad = (c < obs.lower) | (c > obs.upper) | ~np.isfinite(c)
            if bad.any():
                if not self.lenient:
                    j = int(np.argmax(bad))
                    raise OutOfRange(i, float(c[j]), obs.name)
                keep &= ~bad
        dropped = int(n - keep.sum())
        if dropped:
            self.rejected_count += dropped
            warnings.warn(f"dropped {dropped} out-of-range rows", stacklevel=2)
            cols = [c[keep] for c in cols]
        for store, c in zip(self._lists, cols):
            store.extend(c.tolist())
        self._arrays = None

    # --- access ----------------------------------------------------------

    @property
    def n_events(self) -> int:
        return len(self._lists[0])

    def __len__(self) -> int:
        return self.n_events

    def _materialize(self) -> list[np.ndarray]:
        if self._arrays is None:
            self._arrays = [np.asarray(col, dtype=np.float64) for col in self._lists]
        return self._arrays

    def column(self, obs: Variable | str) -> np.ndarray:
        """Full column for one observable, in insertion order."""
        name = obs if isinstance(obs, str) else obs.name
        for i, o in enumerate(self.observables):
            if o.name == name:
                return self._materialize()[i]
        raise UnknownObservable(f"{name!r} is not an observable of this dataset")

    def columns(self) -> dict[str, np.ndarray]:
        """All columns as a name -> array mapping (read-only views for workers)."""
        arrays = self._materialize()
        return {o.name: a for o, a in zip(self.observables, arrays)}


class BinnedDataSet:
    """Uniformly binned event counts over one or more observables.

    Bin contents are stored row-major over the observable axes: the last
    observable's bin index varies fastest.
    """

    def __init__(self, observables: Sequence[Variable], n_bins: Sequence[int]):
        if len(observables) != len(n_bins):
            raise ShapeMismatch("need one bin count per observable")
        for obs in observables:
            if not (math.isfinite(obs.lower) and math.isfinite(obs.upper)):
                raise ValueError(f"{obs.name!r}: binned axes need finite bounds")
        if any(int(nb) < 1 for nb in n_bins):
            raise ValueError("every axis needs at least one bin")
        self.observables = tuple(observables)
        self.n_bins = tuple(int(nb) for nb in n_bins)
        self.contents = np.zeros(int(np.prod(self.n_bins)), dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.contents.sum())

    def bin_width(self, axis: int) -> float:
        obs = self.observables[axis]
        return (obs.upper - obs.lower) / self.n_bins[axis]

    def bin_volume(self) -> float:
        vol = 1.0
        for axis in range(len(self.observables)):
            vol *= self.bin_width(axis)
        return vol

    def bin_center(self, axis: int, bin_index: int) -> float:
        """Center of `bin_index` along one axis: lower + (i + 0.5) * width."""
        if not 0 <= axis < len(self.observables):
            raise IndexOutOfRange(f"axis {axis} out of range")
        if not 0 <= bin_index < self.n_bins[axis]:
            raise IndexOutOfRange(f"bin {bin_index} out of range on axis {axis}")
        obs = self.observables[axis]
        return obs.lower + (bin_index + 0.5) * (obs.upper - obs.lower) / self.n_bins[axis]

    def centers(self) -> dict[str, np.ndarray]:
        """Bin-center grids flattened row-major, one column per observable."""
        axes = [
            np.array([self.bin_center(k, b) for b in range(self.n_bins[k])])
            for k in range(len(self.observables))
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return {o.name: m.reshape(-1) for o, m in zip(self.observables, mesh)}

    def set_content(self, flat_index: int, value: float) -> None:
        if not 0 <= flat_index < self.contents.size:
            raise IndexOutOfRange(f"flat bin {flat_index} out of range")
        if value < 0:
            raise ValueError("bin contents must be non-negative")
        self.contents[flat_index] = float(value)

    def fill(self, ds: UnbinnedDataSet) -> None:
        """Histogram an unbinned dataset into this binning."""
        idx = np.zeros(ds.n_events, dtype=np.int64)
        for axis, obs in enumerate(self.observables):
            col = ds.column(obs.name)
            width = self.bin_width(axis)
            k = np.floor((col - obs.lower) / width).astype(np.int64)
            np.clip(k, 0, self.n_bins[axis] - 1, out=k)
            idx = idx * self.n_bins[axis] + k
        np.add.at(self.contents, idx, 1.0)
