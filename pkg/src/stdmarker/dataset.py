"""Study samples for cohort and case-control biomarker studies.

A sample is stored column-wise (numpy arrays) because every downstream
computation is vectorised; ``records`` gives the row view when needed.
Covariates are discrete strata identified by their label.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import DataError

DEFAULT_SCHEMA = {"d": "d", "y": "y", "x": "x"}


class Design(str, Enum):
    COHORT = "cohort"
    CASE_CONTROL = "case-control"


@dataclass(frozen=True)
class SubjectRecord:
    d: int
    y: float
    x: Hashable


@dataclass(frozen=True)
class StudyDesign:
    kind: Design = Design.COHORT
    prevalence_by_stratum: Mapping[Hashable, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Design(self.kind))
        if self.prevalence_by_stratum is not None:
            prev = dict(self.prevalence_by_stratum)
            for label, rho in prev.items():
                if not (0.0 < float(rho) < 1.0):
                    raise DataError(f"prevalence for stratum {label!r} must lie in (0, 1), got {rho}")
            object.__setattr__(self, "prevalence_by_stratum", prev)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StudySample:
    """Subjects with disease label ``d``, marker ``y`` and stratum label ``x``.

    ``strata`` fixes the stratum order (first appearance unless given) and
    ``codes`` maps each record to its index in ``strata``.
    """

    d: np.ndarray
    y: np.ndarray
    x: np.ndarray
    design: StudyDesign = field(default_factory=StudyDesign)
    strata: tuple = None
    codes: np.ndarray = None

    def __post_init__(self):
        d = np.asarray(self.d)
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=object)
        if not (d.ndim == y.ndim == x.ndim == 1) or not (len(d) == len(y) == len(x)):
            raise DataError("d, y and x must be 1-d arrays of equal length")
        if not np.isin(d, (0, 1)).all():
            raise DataError("invalid disease label: d must be 0 or 1")
        if not np.isfinite(y).all():
            raise DataError("marker values must be finite (missing values are not imputed)")
        d = d.astype(np.int8)

        if self.codes is not None and self.strata is not None:
            codes = np.asarray(self.codes, dtype=np.intp)
            strata = tuple(self.strata)
        else:
            strata = list(self.strata) if self.strata is not None else []
            lookup = {s: i for i, s in enumerate(strata)}
            codes = np.empty(len(x), dtype=np.intp)
            for i, label in enumerate(x):
                j = lookup.get(label)
                if j is None:
                    j = lookup[label] = len(strata)
                    strata.append(label)
                codes[i] = j
            strata = tuple(strata)

        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "strata", strata)
        object.__setattr__(self, "codes", _frozen(codes))

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], design: StudyDesign | None = None):
        if not records:
            raise DataError("empty sample")
        return cls(
            d=np.array([r.d for r in records]),
            y=np.array([r.y for r in records], dtype=float),
            x=np.array([r.x for r in records], dtype=object),
            design=design or StudyDesign(),
        )

    def __len__(self):
        return len(self.d)

    @property
    def records(self) -> list[SubjectRecord]:
        return [SubjectRecord(int(d), float(y), x) for d, y, x in zip(self.d, self.y, self.x)]

    @property
    def n_cases(self) -> int:
        return int(self.d.sum())

    @property
    def n_controls(self) -> int:
        return len(self) - self.n_cases

    def counts(self) -> dict:
        """Map stratum label to ``(n_cases, n_controls)``."""
        k = len(self.strata)
        n_all = np.bincount(self.codes, minlength=k)
        n_case = np.bincount(self.codes, weights=self.d, minlength=k).astype(int)
        return {s: (int(n_case[i]), int(n_all[i] - n_case[i])) for i, s in enumerate(self.strata)}

    def stratum_index(self, label) -> int:
        try:
            return self.strata.index(label)
        except ValueError:
            raise DataError(f"unknown stratum {label!r}") from None

    def take(self, idx: np.ndarray) -> "StudySample":
        """Rows ``idx`` (with repetition allowed), keeping the stratum order."""
        idx = np.asarray(idx, dtype=np.intp)
        return StudySample(self.d[idx], self.y[idx], self.x[idx], self.design,
                           strata=self.strata, codes=self.codes[idx])

    def subset(self, labels) -> "StudySample":
        """Records belonging to the given strata, with ``strata`` restricted to them."""
        if not isinstance(labels, (list, tuple, set)):
            labels = [labels]
        keep = [self.stratum_index(s) for s in labels]
        mask = np.isin(self.codes, keep)
        remap = np.full(len(self.strata), -1, dtype=np.intp)
        remap[keep] = np.arange(len(keep))
        idx = np.flatnonzero(mask)
        return StudySample(self.d[idx], self.y[idx], self.x[idx], self.design,
                           strata=tuple(self.strata[i] for i in keep),
                           codes=remap[self.codes[idx]])

    def with_marker(self, y: np.ndarray) -> "StudySample":
        return StudySample(self.d, np.asarray(y, dtype=float), self.x, self.design,
                           strata=self.strata, codes=self.codes)

    def prevalence(self, label) -> float:
        """P(D=1 | X=label): external for case-control designs, empirical otherwise."""
        prev = self.design.prevalence_by_stratum
        if self.design.kind is Design.CASE_CONTROL:
            if prev is None or label not in prev:
                raise DataError(
                    f"case-control design needs an external prevalence for stratum {label!r}")
            return float(prev[label])
        if prev is not None and label in prev:
            return float(prev[label])
        n_case, n_ctrl = self.counts()[label]
        if n_case == 0 or n_ctrl == 0:
            raise DataError(f"stratum {label!r} has case fraction 0 or 1")
        return n_case / (n_case + n_ctrl)

    def prevalences(self) -> dict:
        return {s: self.prevalence(s) for s in self.strata}


def load_csv(path, schema: Mapping[str, str | None] | None = None,
             design: StudyDesign | None = None) -> StudySample:
    """Read a header-first, comma-separated UTF-8 file into a ``StudySample``.

    ``schema`` maps the logical columns ``d``, ``y``, ``x`` to header names.
    Setting ``x`` to ``None`` puts every record in a single stratum ``"all"``.
    """
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise DataError(f"empty file: {path}")
        for key in ("d", "y", "x"):
            if cols[key] is not None and cols[key] not in header:
                raise DataError(f"missing column {cols[key]!r} in {path}")
        d, y, x = [], [], []
        for lineno, row in enumerate(reader, start=2):
            raw_d = (row[cols["d"]] or "").strip()
            if raw_d not in ("0", "1", "0.0", "1.0"):
                raise DataError(f"invalid disease label {raw_d!r} at line {lineno}")
            try:
                val = float(row[cols["y"]])
            except (TypeError, ValueError):
                raise DataError(f"non-numeric marker value {row[cols['y']]!r} at line {lineno}") from None
            if not math.isfinite(val):
                raise DataError(f"missing or non-finite marker value at line {lineno}")
            d.append(int(float(raw_d)))
            y.append(val)
            x.append(row[cols["x"]] if cols["x"] is not None else "all")
    if not d:
        raise DataError(f"empty file: {path}")
    return StudySample(np.array(d), np.array(y), np.array(x, dtype=object), design or StudyDesign())


def write_csv(sample: StudySample, path, schema: Mapping[str, str] | None = None,
              extra: Mapping[str, np.ndarray] | None = None) -> None:
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([cols["d"], cols["y"], cols["x"], *extra])
        for i in range(len(sample)):
            w.writerow([int(sample.d[i]), repr(float(sample.y[i])), sample.x[i],
                        *(repr(float(v[i])) for v in extra.values())])
