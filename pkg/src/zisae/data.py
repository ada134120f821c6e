"""Population and sample frames, area partitioning and area-level means.

Frames store units column-wise in numpy arrays: an integer area code per unit
(index into ``area_ids``), the covariate matrix without the intercept column,
the response (NaN where unobserved) and an optional stratum code. Frames are
immutable once built; every array is flagged read-only.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NoPositiveResponsesError, SchemaError

AREA, RESPONSE, STRATUM = "area", "response", "stratum"
RESERVED = (AREA, RESPONSE, STRATUM)


@dataclass(frozen=True)
class UnitRecord:
    area: str
    covariates: tuple
    response: Optional[float] = None
    stratum: Optional[str] = None

    @property
    def z(self) -> Optional[int]:
        if self.response is None:
            return None
        return int(self.response > 0)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class _Frame:
    area_ids: tuple
    covariate_names: tuple
    codes: np.ndarray
    X: np.ndarray
    y: np.ndarray
    stratum_levels: Optional[tuple] = None
    stratum_codes: Optional[np.ndarray] = None
    _units: list = field(default_factory=list, repr=False, compare=False)

    _allow_negative = False

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, max(len(self.covariate_names), 1) if X.size else 0)
        n = codes.shape[0]
        if n == 0:
            raise SchemaError("frame has no units")
        if X.shape != (n, len(self.covariate_names)) or y.shape != (n,):
            raise SchemaError(
                f"inconsistent column arity: {n} units, X {X.shape}, y {y.shape}, "
                f"{len(self.covariate_names)} covariate names"
            )
        J = len(self.area_ids)
        if codes.min() < 0 or codes.max() >= J:
            raise SchemaError("unit area code outside the declared areas")
        if np.any(np.bincount(codes, minlength=J) == 0):
            empty = [a for a, c in zip(self.area_ids, np.bincount(codes, minlength=J)) if c == 0]
            raise SchemaError(f"areas without units: {empty}")
        if not np.all(np.isfinite(X)):
            i, k = np.argwhere(~np.isfinite(X))[0]
            raise SchemaError(f"missing covariate value at row {i}, column {self.covariate_names[k]!r}")
        if not self._allow_negative and np.any(y[~np.isnan(y)] < 0):
            i = int(np.flatnonzero(y < 0)[0])
            raise SchemaError(f"negative response at row {i}")
        if np.any(np.isinf(y)):
            raise SchemaError("non-finite response")
        object.__setattr__(self, "codes", _readonly(codes))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        if self.stratum_codes is not None:
            sc = np.asarray(self.stratum_codes, dtype=np.int64)
            if sc.shape != (n,) or sc.min() < 0 or sc.max() >= len(self.stratum_levels):
                raise SchemaError("stratum codes inconsistent with stratum levels")
            object.__setattr__(self, "stratum_codes", _readonly(sc))
        object.__setattr__(self, "area_ids", tuple(self.area_ids))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @classmethod
    def from_arrays(cls, areas, X, y=None, strata=None, covariate_names=None,
                    area_ids=None, stratum_levels=None):
        """Build a frame from per-unit area labels, covariates and optional columns.

        ``area_ids`` defaults to the sorted distinct labels; passing it keeps an
        externally fixed ordering (it must not contain areas without units).
        """
        labels = np.asarray([str(a) for a in areas], dtype=object)
        if area_ids is None:
            area_ids = tuple(sorted(set(labels.tolist())))
        index = {a: j for j, a in enumerate(area_ids)}
        try:
            codes = np.fromiter((index[a] for a in labels), dtype=np.int64, count=len(labels))
        except KeyError as exc:
            raise SchemaError(f"unit area {exc.args[0]!r} not among declared areas") from None
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(len(labels), -1)
        if covariate_names is None:
            covariate_names = tuple(f"x{k + 1}" for k in range(X.shape[1]))
        if y is None:
            y = np.full(len(labels), np.nan)
        y = np.array([np.nan if v is None else v for v in y], dtype=np.float64) \
            if not isinstance(y, np.ndarray) else y.astype(np.float64)
        sc = None
        if strata is not None:
            strata = [None if s is None else str(s) for s in strata]
            if any(s is None for s in strata):
                raise SchemaError("stratum missing for some units")
            if stratum_levels is None:
                stratum_levels = tuple(sorted(set(strata)))
            lvl = {s: h for h, s in enumerate(stratum_levels)}
            unknown = [s for s in set(strata) if s not in lvl]
            if unknown:
                raise SchemaError(f"unknown stratum level(s) {sorted(unknown)} vs declared {list(stratum_levels)}")
            sc = np.array([lvl[s] for s in strata], dtype=np.int64)
            stratum_levels = tuple(stratum_levels)
        else:
            stratum_levels = None
        return cls(area_ids=tuple(area_ids), covariate_names=tuple(covariate_names),
                   codes=codes, X=X, y=y, stratum_levels=stratum_levels, stratum_codes=sc)

    @property
    def N(self) -> int:
        return int(self.codes.shape[0])

    @property
    def J(self) -> int:
        return len(self.area_ids)

    @property
    def p(self) -> int:
        """Number of regression coefficients including the intercept."""
        return self.X.shape[1] + 1

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.codes, minlength=self.J)

    @property
    def has_strata(self) -> bool:
        return self.stratum_codes is not None

    @property
    def z(self) -> np.ndarray:
        return (self.y > 0).astype(np.int64)

    @property
    def area_labels(self) -> np.ndarray:
        return np.asarray(self.area_ids, dtype=object)[self.codes]

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.N), self.X])

    @property
    def units(self) -> list:
        if not self._units:
            strata = self.stratum_levels
            for i in range(self.N):
                yi = self.y[i]
                self._units.append(UnitRecord(
                    area=self.area_ids[self.codes[i]],
                    covariates=tuple(float(v) for v in self.X[i]),
                    response=None if math.isnan(yi) else float(yi),
                    stratum=None if strata is None else strata[self.stratum_codes[i]],
                ))
        return self._units

    def take(self, index):
        """Subset of units; areas left without units are dropped from ``area_ids``."""
        index = np.asarray(index, dtype=np.int64)
        codes = self.codes[index]
        present = np.unique(codes)
        remap = np.full(self.J, -1, dtype=np.int64)
        remap[present] = np.arange(present.size)
        return type(self)(
            area_ids=tuple(self.area_ids[j] for j in present),
            covariate_names=self.covariate_names,
            codes=remap[codes], X=self.X[index], y=self.y[index],
            stratum_levels=self.stratum_levels,
            stratum_codes=None if self.stratum_codes is None else self.stratum_codes[index],
        )

    def codes_in(self, area_ids: Sequence[str]) -> np.ndarray:
        """Area codes of this frame's units re-expressed in another area ordering."""
        index = {a: j for j, a in enumerate(area_ids)}
        try:
            m = np.array([index[a] for a in self.area_ids], dtype=np.int64)
        except KeyError as exc:
            raise SchemaError(f"area {exc.args[0]!r} absent from the population") from None
        return m[self.codes]


class PopulationFrame(_Frame):
    """Finite population partitioned into areas; responses are optional."""


class SampleFrame(_Frame):
    """Sampled units; every unit carries a response."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.isnan(self.y)):
            i = int(np.flatnonzero(np.isnan(self.y))[0])
            raise SchemaError(f"sample unit at row {i} has no response")

    @property
    def sizes(self) -> dict:
        return dict(zip(self.area_ids, self.counts.tolist()))

    def restrict_positive(self) -> "SampleFrame":
        return restrict_positive(self)


class BootSampleFrame(SampleFrame):
    """Sample drawn from a parametric bootstrap population.

    Generated responses can be negative (linear part plus noise), so the
    nonnegativity check is skipped; the two-part refit treats any nonzero
    response as belonging to the continuous part.
    """

    _allow_negative = True


def _rows_to_columns(rows, covariates, area, response, stratum):
    rows = list(rows)
    if not rows:
        raise SchemaError("no rows")
    first = rows[0]
    if not isinstance(first, Mapping):
        raise SchemaError("rows must be mappings from column name to value")
    if area not in first:
        raise SchemaError(f"missing required column {area!r}")
    if covariates is None:
        covariates = [k for k in first if k not in (area, response, stratum)]
    covariates = list(covariates)
    keys = set(first)
    areas, X, y, strata = [], np.empty((len(rows), len(covariates))), [], []
    has_stratum = stratum in first
    for i, row in enumerate(rows):
        if set(row) != keys:
            raise SchemaError(f"row {i}: inconsistent column arity")
        a = row[area]
        if a is None or str(a) == "":
            raise SchemaError(f"row {i}: missing value in column {area!r}")
        areas.append(str(a))
        for k, name in enumerate(covariates):
            if name not in row:
                raise SchemaError(f"missing covariate column {name!r}")
            v = row[name]
            try:
                v = float(v)
            except (TypeError, ValueError):
                v = math.nan
            if v is None or math.isnan(v) or str(row[name]).strip() == "":
                raise SchemaError(f"row {i}: missing covariate value in column {name!r}")
            X[i, k] = v
        r = row.get(response)
        if r is None or (isinstance(r, str) and r.strip() == ""):
            y.append(math.nan)
        else:
            try:
                r = float(r)
            except ValueError:
                raise SchemaError(f"row {i}: non-numeric response {r!r}") from None
            if r < 0:
                raise SchemaError(f"row {i}: negative response {r}")
            y.append(r)
        if has_stratum:
            s = row[stratum]
            if s is None or str(s) == "":
                raise SchemaError(f"row {i}: missing value in column {stratum!r}")
            strata.append(str(s))
    return areas, X, np.asarray(y), (strata if has_stratum else None), tuple(covariates)


def build_population(rows: Iterable[Mapping], covariates=None, *, area=AREA,
                     response=RESPONSE, stratum=STRATUM, strata_levels=None) -> PopulationFrame:
    """Validate tabular rows into a :class:`PopulationFrame` with lexicographic area order."""
    areas, X, y, strata, names = _rows_to_columns(rows, covariates, area, response, stratum)
    return PopulationFrame.from_arrays(areas, X, y, strata, names, stratum_levels=strata_levels)


def build_sample(rows: Iterable[Mapping], covariates=None, *, area=AREA,
                 response=RESPONSE, stratum=STRATUM, strata_levels=None) -> SampleFrame:
    areas, X, y, strata, names = _rows_to_columns(rows, covariates, area, response, stratum)
    return SampleFrame.from_arrays(areas, X, y, strata, names, stratum_levels=strata_levels)


@dataclass(frozen=True, eq=False)
class AreaMeans:
    area_ids: tuple
    means: np.ndarray  # (J, p), leading column of ones
    counts: np.ndarray  # N_j
    stratum_levels: Optional[tuple] = None
    strata_counts: Optional[np.ndarray] = None  # (J, H)

    def index(self, area: str) -> int:
        try:
            return self.area_ids.index(area)
        except ValueError:
            raise SchemaError(f"unknown area {area!r}") from None

    def row(self, area: str) -> np.ndarray:
        return self.means[self.index(area)]


def area_means(pop: _Frame) -> AreaMeans:
    J = pop.J
    counts = pop.counts
    sums = np.zeros((J, pop.X.shape[1]))
    np.add.at(sums, pop.codes, pop.X)
    means = np.column_stack([np.ones(J), sums / counts[:, None]])
    sc = None
    if pop.has_strata:
        H = len(pop.stratum_levels)
        sc = np.bincount(pop.codes * H + pop.stratum_codes, minlength=J * H).reshape(J, H)
    return AreaMeans(pop.area_ids, _readonly(means), _readonly(counts),
                     pop.stratum_levels, None if sc is None else _readonly(sc))


def restrict_positive(sample: SampleFrame) -> SampleFrame:
    """Units with response > 0; areas with no positive unit disappear."""
    keep = np.flatnonzero(sample.y > 0)
    if keep.size == 0:
        raise NoPositiveResponsesError("sample has no positive responses")
    if keep.size == sample.N:
        return sample
    return sample.take(keep)
