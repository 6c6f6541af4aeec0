"""Loading, validating and partitioning three-arm experimental data.

A dataset has one row per unit with two mutually exclusive treatment
indicators ``t1`` and ``t2`` (both zero for the control arm), a mediator
``m`` and an outcome ``y``. Mediator and outcome may be binary or
continuous; they only need to be finite.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ExclusivityError, ParseError, SchemaError

ROLES = ("t1", "t2", "m", "y")
ARMS = ("control", "arm1", "arm2")
MIN_ARM_SIZE = 2


class ObservationRow(NamedTuple):
    t1: int
    t2: int
    m: float
    y: float


@dataclass(frozen=True)
class ArmSummary:
    arm: str
    n_arm: int
    mean_m: float
    mean_y: float
    var_m: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column-oriented store of validated observations.

    Use :meth:`from_arrays` or :func:`load_dataset` rather than the
    constructor; both check indicator values and mutual exclusivity.
    """

    t1: np.ndarray
    t2: np.ndarray
    m: np.ndarray
    y: np.ndarray
    column_names: dict = field(default_factory=lambda: {r: r for r in ROLES})

    @classmethod
    def from_arrays(cls, t1, t2, m, y, column_names=None):
        t1 = np.asarray(t1)
        t2 = np.asarray(t2)
        m = np.asarray(m, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(m)
        if not (len(t1) == len(t2) == len(y) == n):
            raise ValueError("t1, t2, m and y must have the same length")
        for name, col in (("t1", t1), ("t2", t2)):
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise ParseError(int(bad[0]) + 1, name, col[bad[0]].item(), "indicator must be 0 or 1")
        for name, col in (("m", m), ("y", y)):
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise ParseError(int(bad[0]) + 1, name, col[bad[0]].item(), "value must be finite")
        both = np.flatnonzero((t1 == 1) & (t2 == 1))
        if both.size:
            raise ExclusivityError(int(both[0]) + 1)
        arrays = [t1.astype(np.int8), t2.astype(np.int8), m.copy(), y.copy()]
        for a in arrays:
            a.setflags(write=False)
        names = dict(column_names) if column_names else {r: r for r in ROLES}
        return cls(*arrays, column_names=names)

    @property
    def n(self):
        return len(self.m)

    @property
    def arm(self):
        """Arm code per row: 0 control, 1 first treatment, 2 second treatment."""
        return (self.t1 + 2 * self.t2).astype(np.intp)

    @property
    def rows(self):
        return [ObservationRow(int(a), int(b), float(c), float(d))
                for a, b, c, d in zip(self.t1, self.t2, self.m, self.y)]

    def take(self, index):
        """New dataset made of the rows at ``index`` (used for resampling)."""
        index = np.asarray(index)
        return Dataset.from_arrays(self.t1[index], self.t2[index], self.m[index],
                                   self.y[index], self.column_names)

    def with_arrays(self, **arrays):
        cols = {"t1": self.t1, "t2": self.t2, "m": self.m, "y": self.y}
        cols.update(arrays)
        return Dataset.from_arrays(cols["t1"], cols["t2"], cols["m"], cols["y"], self.column_names)


@dataclass
class ValidationReport:
    sizes: list
    flags: list

    @property
    def ok(self):
        return not self.flags

    def to_dict(self):
        return {"sizes": dict(zip(ARMS, self.sizes)), "flags": list(self.flags)}


def _parse_indicator(cell, row, column):
    text = cell.strip()
    if text == "0":
        return 0
    if text == "1":
        return 1
    raise ParseError(row, column, cell, "indicator must be literally 0 or 1")


def _parse_real(cell, row, column):
    text = cell.strip()
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, column, cell, "not a number") from None
    if not math.isfinite(value):
        raise ParseError(row, column, cell, "value must be finite")
    return value


def load_dataset(source, schema=None, delimiter=","):
    """Parse delimited text with a header row into a :class:`Dataset`.

    Parameters
    ----------
    source : str, path-like or file object
        Path to a delimited file, or an open text stream.
    schema : dict, optional
        Maps each role in ``("t1", "t2", "m", "y")`` to a header label.
        Defaults to the role names themselves.
    delimiter : str
        Field separator, ``","`` or ``"\\t"``.

    Raises
    ------
    SchemaError
        A role has no mapping or its column is absent from the header.
    ParseError
        A cell is empty, non-numeric, non-finite, or an indicator other
        than 0/1. Rows are numbered from 1, excluding the header.
    ExclusivityError
        Some row has ``t1 = t2 = 1``.
    """
    schema = dict(schema or {r: r for r in ROLES})
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            return load_dataset(fh, schema, delimiter)

    reader = csv.reader(source, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("t1", "input is empty; a header row is required") from None

    positions = {}
    for role in ROLES:
        label = schema.get(role)
        if label is None:
            raise SchemaError(role)
        if label not in header:
            raise SchemaError(role, f"column {label!r} for role {role!r} not found in header")
        positions[role] = header.index(label)

    cols = {role: [] for role in ROLES}
    for i, record in enumerate(reader, start=1):
        if not record or all(not c.strip() for c in record):
            continue
        for role in ROLES:
            pos = positions[role]
            cell = record[pos] if pos < len(record) else ""
            if role in ("t1", "t2"):
                cols[role].append(_parse_indicator(cell, i, schema[role]))
            else:
                cols[role].append(_parse_real(cell, i, schema[role]))
        if cols["t1"][-1] == 1 and cols["t2"][-1] == 1:
            raise ExclusivityError(i)

    return Dataset.from_arrays(cols["t1"], cols["t2"], cols["m"], cols["y"], schema)


def loads_dataset(text, schema=None, delimiter=","):
    return load_dataset(io.StringIO(text), schema, delimiter)


def dump_dataset(d, fh, delimiter=","):
    """Write ``d`` with its source column labels; ``repr`` keeps floats exact."""
    labels = [d.column_names.get(r, r) for r in ROLES]
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow(labels)
    for row in zip(d.t1, d.t2, d.m, d.y):
        writer.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3]))])


def dumps_dataset(d, delimiter=","):
    buf = io.StringIO()
    dump_dataset(d, buf, delimiter)
    return buf.getvalue()


def arm_partition(d):
    """Per-arm size, means and sample mediator variance (divisor ``n_arm - 1``)."""
    out = []
    arm = d.arm
    for code, name in enumerate(ARMS):
        mask = arm == code
        k = int(mask.sum())
        if k == 0:
            out.append(ArmSummary(name, 0, math.nan, math.nan, math.nan))
            continue
        m = d.m[mask]
        y = d.y[mask]
        mean_m = math.fsum(m) / k
        mean_y = math.fsum(y) / k
        var_m = math.fsum((m - mean_m) ** 2) / (k - 1) if k > 1 else math.nan
        out.append(ArmSummary(name, k, mean_m, mean_y, var_m))
    return tuple(out)


def validate(d):
    """Report structural problems without raising.

    Flags arms with fewer than two rows, arms whose mediator is constant
    (the within-arm slopes and the conservatism diagnostic then do not
    exist) and an outcome that is constant over the whole sample.
    """
    summaries = arm_partition(d)
    flags = []
    for s in summaries:
        if s.n_arm < MIN_ARM_SIZE:
            flags.append(f"arm {s.arm} underpopulated ({s.n_arm} rows, need {MIN_ARM_SIZE})")
    for s in summaries:
        if s.n_arm >= MIN_ARM_SIZE and s.var_m == 0:
            flags.append(f"arm {s.arm} has var_m = 0")
    if d.n and np.all(d.m == d.m[0]):
        flags.append("mediator is constant")
    if d.n and np.all(d.y == d.y[0]):
        flags.append("outcome is constant")
    return ValidationReport([s.n_arm for s in summaries], flags)
