"""Tabular data ingestion, typing, encoding, grouping and synthetic mixtures."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyAfterDeletion,
    HeaderMismatch,
    LengthMismatch,
    NonFiniteInput,
    SingleLevel,
    UnreadableFile,
    ZeroVariance,
)
from .linalg import spd_factorize
from .rng import make_rng

log = logging.getLogger(__name__)


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: ColumnKind


def _parse_real(text: str):
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


class Dataset:
    """Immutable table of named numeric (float) and categorical (str) columns.

    ``dropped`` records how many rows were removed by listwise deletion when
    the table was loaded.
    """

    def __init__(self, columns: Mapping[str, Sequence], kinds: Mapping[str, ColumnKind] | None = None,
                 dropped: int = 0):
        kinds = dict(kinds or {})
        specs = []
        data = {}
        n_rows = None
        for name, values in columns.items():
            kind = kinds.get(name)
            arr = np.asarray(values)
            if kind is None:
                kind = ColumnKind.NUMERIC if arr.dtype.kind in "biuf" else ColumnKind.CATEGORICAL
            kind = ColumnKind(kind)
            if kind is ColumnKind.NUMERIC:
                arr = np.array(arr, dtype=float)
                if not np.all(np.isfinite(arr)):
                    raise NonFiniteInput(f"column {name!r} has non-finite values")
            else:
                arr = np.array([str(v) for v in arr], dtype=object)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} is not one-dimensional")
            if n_rows is None:
                n_rows = len(arr)
            elif len(arr) != n_rows:
                raise LengthMismatch(f"column {name!r} has {len(arr)} cells, expected {n_rows}")
            arr.setflags(write=False)
            specs.append(ColumnSpec(name, kind))
            data[name] = arr
        self._specs = tuple(specs)
        self._data = data
        self.n_rows = n_rows or 0
        self.dropped = dropped

    @property
    def columns(self) -> tuple[ColumnSpec, ...]:
        return self._specs

    @property
    def names(self) -> list[str]:
        return [c.name for c in self._specs]

    def kind(self, name: str) -> ColumnKind:
        for c in self._specs:
            if c.name == name:
                return c.kind
        raise KeyError(name)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._data[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def __len__(self) -> int:
        return self.n_rows

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._specs == other._specs and all(
            np.array_equal(self._data[k], other._data[k]) for k in self._data)

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        """Stack numeric columns into an ``(n, d)`` float matrix."""
        names = list(names)
        for name in names:
            if self.kind(name) is not ColumnKind.NUMERIC:
                raise DataError(f"column {name!r} is not numeric")
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self._data[n] for n in names])

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset({n: self._data[n][rows] for n in self.names},
                       {c.name: c.kind for c in self._specs})

    def with_columns(self, columns: Mapping[str, Sequence], kinds: Mapping[str, ColumnKind] | None = None,
                     ) -> "Dataset":
        data = dict(self._data)
        k = {c.name: c.kind for c in self._specs}
        data.update(columns)
        k.update(kinds or {})
        return Dataset(data, k, dropped=self.dropped)


def load_table(path, schema: Sequence[ColumnSpec] | None = None, delimiter: str = ",") -> Dataset:
    """Read a delimited UTF-8 text file with a header row.

    Rows containing any empty cell are dropped (listwise deletion) and the
    count is stored on ``Dataset.dropped``. Without a schema a column is
    numeric when every remaining cell parses as a finite real.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from None
    if not rows:
        raise UnreadableFile(f"{path} has no header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    if schema is not None and [c.name for c in schema] != header:
        raise HeaderMismatch(f"schema {[c.name for c in schema]} does not match header {header}")
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"row {i + 2} has {len(r)} cells, header has {len(header)}")
    kept = [r for r in body if all(cell.strip() != "" for cell in r)]
    dropped = len(body) - len(kept)
    if dropped:
        log.warning("dropped %d incomplete row(s) from %s", dropped, path)
    if not kept:
        raise EmptyAfterDeletion(f"no complete rows in {path}")

    columns, kinds = {}, {}
    for j, name in enumerate(header):
        cells = [r[j].strip() for r in kept]
        parsed = [_parse_real(c) for c in cells]
        if schema is not None:
            kind = ColumnKind(schema[j].kind)
            if kind is ColumnKind.NUMERIC and any(p is None for p in parsed):
                raise DataError(f"column {name!r} declared numeric has non-numeric cells")
        else:
            kind = ColumnKind.NUMERIC if all(p is not None for p in parsed) else ColumnKind.CATEGORICAL
        columns[name] = parsed if kind is ColumnKind.NUMERIC else cells
        kinds[name] = kind
    return Dataset(columns, kinds, dropped=dropped)


def write_table(ds: Dataset, path, delimiter: str = ",") -> None:
    """Write ``ds`` so that :func:`load_table` reads back identical cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(ds.names)
        cols = []
        for c in ds.columns:
            v = ds[c.name]
            cols.append([format(x, ".17g") for x in v] if c.kind is ColumnKind.NUMERIC else list(v))
        for row in zip(*cols):
            w.writerow(row)


def encode_categoricals(ds: Dataset, cols: Sequence[str]) -> tuple[Dataset, dict[str, list[str]]]:
    """Replace each categorical column by ``m - 1`` 0/1 indicator columns.

    The lexicographically first level is the reference. Indicators are named
    ``"<column>=<level>"`` and take the original column's position.
    """
    cols = list(cols)
    for c in cols:
        if ds.kind(c) is not ColumnKind.CATEGORICAL:
            raise DataError(f"column {c!r} is not categorical")
    data, kinds, groups = {}, {}, {}
    for spec in ds.columns:
        if spec.name not in cols:
            data[spec.name] = ds[spec.name]
            kinds[spec.name] = spec.kind
            continue
        values = ds[spec.name]
        levels = sorted(set(values))
        if len(levels) < 2:
            raise SingleLevel(spec.name)
        names = []
        for level in levels[1:]:
            ind = f"{spec.name}={level}"
            data[ind] = (values == level).astype(float)
            kinds[ind] = ColumnKind.NUMERIC
            names.append(ind)
        groups[spec.name] = names
    return Dataset(data, kinds, dropped=ds.dropped), groups


def standardize(ds: Dataset, cols: Sequence[str]) -> tuple[Dataset, dict[str, tuple[float, float]]]:
    """Center and scale columns to mean 0 and sd 1 (sd with ``ddof=1``)."""
    updates, record = {}, {}
    for c in cols:
        x = ds.matrix([c])[:, 0]
        mean = math.fsum(x) / len(x)
        dev = x - mean
        var = math.fsum(dev * dev) / (len(x) - 1) if len(x) > 1 else 0.0
        sd = math.sqrt(var)
        if sd == 0.0 or sd <= 1e-13 * np.max(np.abs(x)):
            raise ZeroVariance(c)
        z = dev / sd
        # one refinement pass removes residual rounding from the first pass
        m2 = math.fsum(z) / len(z)
        z = z - m2
        z = z / math.sqrt(math.fsum(z * z) / (len(z) - 1))
        updates[c] = z
        record[c] = (mean, sd)
    return ds.with_columns(updates), record


def split_by_group(ds: Dataset, labels) -> list[Dataset]:
    """One dataset per distinct label (ascending), preserving row order."""
    labels = np.asarray(labels)
    if labels.shape != (ds.n_rows,):
        raise LengthMismatch(f"{len(labels)} labels for {ds.n_rows} rows")
    return [ds.take(np.flatnonzero(labels == g)) for g in np.unique(labels)]


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture parameters: weights ``(K,)``, means ``(K, d)``, covariances ``(K, d, d)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chol: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        K, d = mu.shape
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise DataError("inconsistent mixture shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DataError("mixture weights must be non-negative and sum to 1")
        chol = tuple(spd_factorize(c).lower for c in cov)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]


def generate_mixture_sample(spec: MixtureSpec, n: int, seed: int,
                            names: Sequence[str] | None = None) -> tuple[Dataset, np.ndarray]:
    """Draw ``n`` rows from the mixture; returns the data and 1-based true labels."""
    if n < 1:
        raise DataError("n must be positive")
    rng = make_rng(seed)
    cls = rng.choice(spec.K, size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.d))
    X = np.empty((n, spec.d))
    for k in range(spec.K):
        idx = cls == k
        X[idx] = spec.means[k] + z[idx] @ spec._chol[k].T
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(spec.d)]
    return Dataset({nm: X[:, j] for j, nm in enumerate(names)}), cls + 1
