"""Placement values of markers relative to per-stratum control distributions.

The placement value of ``y`` in stratum ``x`` is the proportion of that
stratum's controls with a marker strictly above ``y``.  With
``ties="midrank"`` a tied control counts one half.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dataset import StudySample
from .errors import DataError

TIES = ("strict", "midrank")


@dataclass(frozen=True)
class ReferenceSet:
    """Sorted control markers per stratum label."""

    controls: Mapping

    @property
    def counts(self) -> dict:
        return {s: len(v) for s, v in self.controls.items()}

    def __getitem__(self, label) -> np.ndarray:
        try:
            return self.controls[label]
        except KeyError:
            raise DataError(f"unknown stratum {label!r}") from None


def fit_reference(sample: StudySample) -> ReferenceSet:
    controls = {}
    is_ctrl = sample.d == 0
    for i, s in enumerate(sample.strata):
        vals = np.sort(sample.y[(sample.codes == i) & is_ctrl])
        if len(vals) == 0:
            raise DataError(f"stratum {s!r} has no controls to build a reference from")
        vals.setflags(write=False)
        controls[s] = vals
    return ReferenceSet(controls)


def _placement(sorted_ctrl: np.ndarray, y, ties: str) -> np.ndarray:
    n = len(sorted_ctrl)
    right = np.searchsorted(sorted_ctrl, y, side="right")
    if ties == "strict":
        return (n - right) / n
    if ties == "midrank":
        left = np.searchsorted(sorted_ctrl, y, side="left")
        return ((n - right) + 0.5 * (right - left)) / n
    raise ValueError(f"ties must be one of {TIES}")


def placement_value(ref: ReferenceSet, y: float, x, ties: str = "strict") -> float:
    return float(_placement(ref[x], y, ties))


def placement_values(ref: ReferenceSet, y, x, ties: str = "strict") -> np.ndarray:
    """Vectorised ``placement_value`` over paired arrays of markers and labels."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=object)
    out = np.empty(len(y))
    for label in dict.fromkeys(x):
        mask = x == label
        out[mask] = _placement(ref[label], y[mask], ties)
    return out


@dataclass(frozen=True, eq=False)
class StandardizedSample:
    sample: StudySample
    u_hat: np.ndarray
    ties: str = "strict"

    def __len__(self):
        return len(self.u_hat)

    @property
    def d(self):
        return self.sample.d

    @property
    def case_u(self) -> np.ndarray:
        return self.u_hat[self.sample.d == 1]

    def subset(self, labels) -> "StandardizedSample":
        """Restrict to some strata; placement values are kept, not recomputed."""
        if not isinstance(labels, (list, tuple, set)):
            labels = [labels]
        keep = [self.sample.stratum_index(s) for s in labels]
        mask = np.isin(self.sample.codes, keep)
        return StandardizedSample(self.sample.subset(list(labels)), self.u_hat[mask], self.ties)


def standardize_sample(sample: StudySample, ref: ReferenceSet | None = None,
                       ties: str = "strict") -> StandardizedSample:
    """Attach placement values to every record, cases and controls alike.

    Controls are compared against a reference that includes themselves.
    """
    if ref is None:
        ref = fit_reference(sample)
    u = np.empty(len(sample))
    for i, s in enumerate(sample.strata):
        mask = sample.codes == i
        u[mask] = _placement(ref[s], sample.y[mask], ties)
    u.setflags(write=False)
    return StandardizedSample(sample, u, ties)


def frequency_matched_placement(ref: ReferenceSet, y: float, stratum_weights: Mapping,
                                ties: str = "strict") -> float:
    """Mixture of per-stratum placement values for frequency-matched designs."""
    w = np.array([float(v) for v in stratum_weights.values()])
    if (w < 0).any():
        raise DataError("stratum weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise DataError(f"stratum weights must sum to 1, got {w.sum()!r}")
    return float(sum(wt * _placement(ref[s], y, ties) for s, wt in zip(stratum_weights, w)))
