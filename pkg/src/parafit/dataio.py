"""CSV event files.

Format: one header line of observable names, then comma-separated numeric
rows. Lines starting with '#' are comments and may appear anywhere.
Numbers are written in shortest round-trip form, so a write/read cycle
reproduces the same binary64 values.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import UnbinnedDataSet, Variable
from .errors import DataError


def write_events_csv(ds: UnbinnedDataSet, path: str) -> None:
    names = [o.name for o in ds.observables]
    cols = [ds.column(n) for n in names]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_events_csv(
    path: str,
    observables: Sequence[Variable] | None = None,
    lenient: bool = False,
) -> UnbinnedDataSet:
    """Read an event file into a dataset.

    When `observables` is given, file columns are matched to them by header
    name (extra file columns are ignored); otherwise unbounded observables
    are created from the header.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc}") from exc

    header: list[str] | None = None
    data_lines: list[str] = []
    for line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if header is None:
            header = [c.strip() for c in stripped.split(",")]
        else:
            data_lines.append(stripped)
    if header is None:
        raise DataError(f"{path!r} has no header line")

    if data_lines:
        try:
            table = np.loadtxt(data_lines, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path!r}: {exc}") from exc
        if table.shape[1] != len(header):
            raise DataError(
                f"{path!r}: {table.shape[1]} columns per row but {len(header)} header names"
            )
    else:
        table = np.empty((0, len(header)))

    if observables is None:
        observables = [Variable.observable(name, -math.inf, math.inf) for name in header]
        order = list(range(len(header)))
    else:
        order = []
        for obs in observables:
            if obs.name not in header:
                raise DataError(f"{path!r}: column {obs.name!r} not found in header {header}")
            order.append(header.index(obs.name))

    ds = UnbinnedDataSet(list(observables), lenient=lenient)
    ds.extend([table[:, j] for j in order])
    return ds
