"""Shared domain types and their invariants.

Every other module consumes these. All types are immutable after
construction; constructors reject invariant violations with a
:class:`ValidationError` naming the violated invariant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

METHOD_HISTOGRAM = "histogram"
METHOD_ISOTONIC = "isotonic"
METHOD_SCALING_BINNING = "scaling-binning"
METHODS = (METHOD_HISTOGRAM, METHOD_ISOTONIC, METHOD_SCALING_BINNING)

SCOPE_SHARED = "shared"
SCOPE_TFG = "tfg"


class TagcalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(TagcalError, ValueError):
    """A domain-type invariant was violated."""


class IngestError(TagcalError):
    """A score/gold/count file is missing or malformed."""


class GroupingError(TagcalError):
    """A frequency partition cannot be built or used as requested."""


class FitError(TagcalError):
    """A recalibrator cannot be fitted on the given data."""


class MetricError(TagcalError):
    """A calibration metric is undefined for the given inputs."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, slots=True)
class ScoreRecord:
    """One (instance, tag, confidence, binary-label) observation."""

    instance_id: str
    tag: str
    confidence: float
    label: int

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0) or math.isnan(self.confidence):
            raise ValidationError(
                f"ScoreRecord.confidence must lie in [0, 1], got {self.confidence!r}"
            )
        if self.label not in (0, 1):
            raise ValidationError(f"ScoreRecord.label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class CalibrationDataset:
    """An ordered collection of above-threshold score records.

    ``N`` (the total count used by metrics) equals ``len(records)``.
    """

    records: tuple[ScoreRecord, ...]
    threshold: float
    tag_universe: frozenset[str] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not (0.0 <= self.threshold < 1.0):
            raise ValidationError(
                f"CalibrationDataset.threshold must lie in [0, 1), got {self.threshold!r}"
            )
        seen_positive: set[str] = set()
        for rec in self.records:
            if rec.confidence < self.threshold:
                raise ValidationError(
                    "CalibrationDataset requires every record confidence >= threshold "
                    f"({rec.instance_id!r}, {rec.tag!r}: {rec.confidence!r} < {self.threshold!r})"
                )
            if rec.label == 1:
                if rec.instance_id in seen_positive:
                    raise ValidationError(
                        "CalibrationDataset allows at most one label-1 record per instance, "
                        f"instance {rec.instance_id!r} has several"
                    )
                seen_positive.add(rec.instance_id)
        universe = frozenset(rec.tag for rec in self.records)
        if self.tag_universe is None:
            object.__setattr__(self, "tag_universe", universe)
        elif frozenset(self.tag_universe) != universe:
            raise ValidationError(
                "CalibrationDataset.tag_universe must equal the set of tags in records"
            )

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def confidences(self) -> np.ndarray:
        return _frozen_array([r.confidence for r in self.records], np.float64)

    @cached_property
    def labels(self) -> np.ndarray:
        return _frozen_array([r.label for r in self.records], np.float64)

    @cached_property
    def tags(self) -> tuple[str, ...]:
        return tuple(r.tag for r in self.records)

    def pairs(self) -> list[tuple[float, int]]:
        """(confidence, label) pairs in record order."""
        return [(r.confidence, r.label) for r in self.records]

    def with_confidences(self, confidences: Sequence[float], threshold: float = 0.0
                         ) -> "CalibrationDataset":
        """Copy of the dataset with replaced confidences (used after recalibration)."""
        if len(confidences) != len(self.records):
            raise ValidationError(
                "with_confidences requires one value per record, "
                f"got {len(confidences)} for {len(self.records)} records"
            )
        records = tuple(
            ScoreRecord(r.instance_id, r.tag, float(c), r.label)
            for r, c in zip(self.records, confidences)
        )
        return CalibrationDataset(records, threshold)


@dataclass(frozen=True)
class TagCountTable:
    """Gold-tag frequencies from training data; drives TFG group construction."""

    counts: Mapping[str, int]
    total: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        counts = dict(self.counts)
        for tag, count in counts.items():
            if not isinstance(count, int) or isinstance(count, bool) or count < 0:
                raise ValidationError(
                    f"TagCountTable counts must be non-negative integers, "
                    f"got {tag!r}: {count!r}"
                )
        object.__setattr__(self, "counts", counts)
        total = sum(counts.values())
        if self.total is None:
            object.__setattr__(self, "total", total)
        elif self.total != total:
            raise ValidationError(
                f"TagCountTable.total must equal the sum of counts ({total}), got {self.total}"
            )

    def relative_frequency(self, tag: str) -> float:
        if self.total == 0:
            return 0.0
        return self.counts.get(tag, 0) / self.total


@dataclass(frozen=True)
class GroupPartition:
    """Ordered assignment of every positive-count tag to one of G frequency groups.

    Group 0 holds the most frequent tags; the last group the rarest. The
    descending-frequency invariant is enforced where it matters, at build
    time (see :func:`tagcal.grouping.build_tfg`); deserialized partitions
    are checked structurally.
    """

    num_groups: int
    groups: tuple[tuple[str, ...], ...]
    cumulative_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))
        object.__setattr__(self, "cumulative_counts", tuple(int(c) for c in self.cumulative_counts))
        if self.num_groups < 1:
            raise ValidationError(f"GroupPartition.num_groups must be >= 1, got {self.num_groups}")
        if len(self.groups) != self.num_groups:
            raise ValidationError(
                f"GroupPartition expects {self.num_groups} groups, got {len(self.groups)}"
            )
        if len(self.cumulative_counts) != self.num_groups:
            raise ValidationError(
                "GroupPartition.cumulative_counts must have one entry per group"
            )
        seen: set[str] = set()
        for group in self.groups:
            if not group:
                raise ValidationError("GroupPartition groups must be non-empty")
            for tag in group:
                if tag in seen:
                    raise ValidationError(
                        f"GroupPartition groups must be pairwise disjoint, {tag!r} repeats"
                    )
                seen.add(tag)

    @cached_property
    def _index(self) -> Mapping[str, int]:
        return {tag: g for g, group in enumerate(self.groups) for tag in group}

    def group_of(self, tag: str) -> int:
        """Group index for ``tag``; unseen tags map to the last (rarest) group."""
        return self._index.get(tag, self.num_groups - 1)

    def to_dict(self) -> dict:
        return {
            "num_groups": self.num_groups,
            "groups": [list(g) for g in self.groups],
            "cumulative_counts": list(self.cumulative_counts),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroupPartition":
        return cls(
            num_groups=int(data["num_groups"]),
            groups=tuple(tuple(g) for g in data["groups"]),
            cumulative_counts=tuple(data["cumulative_counts"]),
        )


@dataclass(frozen=True, eq=False)
class BinPartition:
    """Equal-count (or fixed-width) partition of confidence scores.

    ``members`` holds, per bin, an ``(n_b, 2)`` array of (confidence, label)
    pairs from the fitting data, in stable-sorted order. Empty bins (possible
    only for fixed-width partitions) carry NaN mean statistics as the
    "undefined" flag.
    """

    bin_count: int
    members: tuple[np.ndarray, ...]
    boundaries: np.ndarray
    per_bin_mean_confidence: np.ndarray
    per_bin_positive_rate: np.ndarray
    per_bin_size: np.ndarray

    def __post_init__(self):
        if self.bin_count < 1:
            raise ValidationError(f"BinPartition.bin_count must be >= 1, got {self.bin_count}")
        if len(self.members) != self.bin_count:
            raise ValidationError("BinPartition.members must have one entry per bin")
        object.__setattr__(self, "boundaries", _frozen_array(self.boundaries, np.float64))
        object.__setattr__(
            self, "per_bin_mean_confidence", _frozen_array(self.per_bin_mean_confidence, np.float64)
        )
        object.__setattr__(
            self, "per_bin_positive_rate", _frozen_array(self.per_bin_positive_rate, np.float64)
        )
        object.__setattr__(self, "per_bin_size", _frozen_array(self.per_bin_size, np.int64))
        members = []
        for arr in self.members:
            frozen = _frozen_array(arr, np.float64).reshape(-1, 2)
            frozen.setflags(write=False)
            members.append(frozen)
        object.__setattr__(self, "members", tuple(members))

        if self.boundaries.shape != (self.bin_count - 1,):
            raise ValidationError(
                f"BinPartition with {self.bin_count} bins requires {self.bin_count - 1} boundaries"
            )
        if self.bin_count > 1 and not np.all(np.diff(self.boundaries) > 0):
            raise ValidationError("BinPartition.boundaries must be strictly increasing")
        for stats_name, stats in (
            ("per_bin_mean_confidence", self.per_bin_mean_confidence),
            ("per_bin_positive_rate", self.per_bin_positive_rate),
        ):
            if stats.shape != (self.bin_count,):
                raise ValidationError(f"BinPartition.{stats_name} must have one entry per bin")
            for size, value in zip(self.per_bin_size, stats):
                if size > 0 and not (0.0 <= value <= 1.0):
                    raise ValidationError(
                        f"BinPartition.{stats_name} must lie in [0, 1] for non-empty bins"
                    )
                if size == 0 and not math.isnan(value):
                    raise ValidationError(
                        f"BinPartition.{stats_name} must be NaN for empty bins"
                    )
        for size, arr in zip(self.per_bin_size, self.members):
            if arr.shape[0] != size:
                raise ValidationError("BinPartition.per_bin_size must match members")

    @property
    def size(self) -> int:
        """Total number of fitted items (the N of the fitting data)."""
        return int(self.per_bin_size.sum())


@dataclass(frozen=True, eq=False)
class BinnedSubModel:
    """Piecewise-constant map: bin boundaries plus one output per bin."""

    boundaries: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "boundaries", _frozen_array(self.boundaries, np.float64))
        object.__setattr__(self, "outputs", _frozen_array(self.outputs, np.float64))
        if self.outputs.shape != (self.boundaries.shape[0] + 1,):
            raise ValidationError("BinnedSubModel requires len(outputs) == len(boundaries) + 1")
        if self.outputs.size and not np.all((self.outputs >= 0.0) & (self.outputs <= 1.0)):
            raise ValidationError("BinnedSubModel.outputs must lie in [0, 1]")
        if self.boundaries.size > 1 and not np.all(np.diff(self.boundaries) > 0):
            raise ValidationError("BinnedSubModel.boundaries must be strictly increasing")

    def to_dict(self) -> dict:
        return {"boundaries": self.boundaries.tolist(), "outputs": self.outputs.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BinnedSubModel":
        return cls(np.asarray(data["boundaries"]), np.asarray(data["outputs"]))


@dataclass(frozen=True, eq=False)
class IsotonicSubModel:
    """Non-decreasing piecewise-linear map given by (breakpoint, value) pairs."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _frozen_array(self.breakpoints, np.float64))
        object.__setattr__(self, "values", _frozen_array(self.values, np.float64))
        if self.breakpoints.shape != self.values.shape or self.breakpoints.size == 0:
            raise ValidationError("IsotonicSubModel requires matched, non-empty breakpoint/value arrays")
        if not np.all(np.diff(self.breakpoints) > 0):
            raise ValidationError("IsotonicSubModel.breakpoints must be strictly increasing")
        if not np.all(np.diff(self.values) >= 0):
            raise ValidationError("IsotonicSubModel.values must be non-decreasing")
        if not np.all((self.values >= 0.0) & (self.values <= 1.0)):
            raise ValidationError("IsotonicSubModel.values must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "IsotonicSubModel":
        return cls(np.asarray(data["breakpoints"]), np.asarray(data["values"]))


@dataclass(frozen=True, eq=False)
class RecalibratorModel:
    """A fitted calibration map, immutable after fitting.

    ``scope`` is either ``"shared"`` (one sub-model pooling all tags) or a
    :class:`GroupPartition` (one sub-model per frequency group). ``bins`` is
    None for isotonic models, which have no bin-count hyperparameter.
    """

    method: str
    scope: str | GroupPartition
    threshold: float
    bins: int | None
    submodels: tuple

    def __post_init__(self):
        object.__setattr__(self, "submodels", tuple(self.submodels))
        if self.method not in METHODS:
            raise ValidationError(f"RecalibratorModel.method must be one of {METHODS}, "
                                  f"got {self.method!r}")
        if isinstance(self.scope, GroupPartition):
            expected = self.scope.num_groups
        elif self.scope == SCOPE_SHARED:
            expected = 1
        else:
            raise ValidationError(
                f"RecalibratorModel.scope must be {SCOPE_SHARED!r} or a GroupPartition, "
                f"got {self.scope!r}"
            )
        if len(self.submodels) != expected:
            raise ValidationError(
                f"RecalibratorModel expects {expected} sub-models for this scope, "
                f"got {len(self.submodels)}"
            )
        wanted = IsotonicSubModel if self.method == METHOD_ISOTONIC else BinnedSubModel
        for sub in self.submodels:
            if not isinstance(sub, wanted):
                raise ValidationError(
                    f"{self.method} models require {wanted.__name__} sub-models"
                )

    @property
    def is_grouped(self) -> bool:
        return isinstance(self.scope, GroupPartition)

    def to_dict(self) -> dict:
        if self.is_grouped:
            scope = {"kind": SCOPE_TFG, "partition": self.scope.to_dict()}
        else:
            scope = {"kind": SCOPE_SHARED}
        return {
            "method": self.method,
            "scope": scope,
            "threshold": self.threshold,
            "B": self.bins,
            "parameters": [sub.to_dict() for sub in self.submodels],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RecalibratorModel":
        try:
            scope_data = data["scope"]
            if scope_data["kind"] == SCOPE_TFG:
                scope: str | GroupPartition = GroupPartition.from_dict(scope_data["partition"])
            else:
                scope = SCOPE_SHARED
            method = data["method"]
            sub_cls = IsotonicSubModel if method == METHOD_ISOTONIC else BinnedSubModel
            submodels = tuple(sub_cls.from_dict(p) for p in data["parameters"])
            bins = data["B"]
            return cls(
                method=method,
                scope=scope,
                threshold=float(data["threshold"]),
                bins=None if bins is None else int(bins),
                submodels=submodels,
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed recalibrator model: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RecalibratorModel":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RecalibratorModel":
        path = Path(path)
        if not path.exists():
            raise IngestError(f"model file not found: {path}")
        return cls.from_json(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ConditionRow:
    """One report row: a recalibration condition evaluated on the test split.

    The uncalibrated baselineuses method "none" and carries no deltas.
    Deltas are relative changes in percent, computed from unrounded errors.
    """

    method: str
    fit_groups: int | None
    smce: float
    smce_delta: float | None
    gmce: tuple[float, ...]
    gmce_delta: tuple[float, ...] | None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "G": self.fit_groups,
            "smce": self.smce,
            "smce_delta": self.smce_delta,
            "gmce": list(self.gmce),
            "gmce_delta": None if self.gmce_delta is None else list(self.gmce_delta),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConditionRow":
        return cls(
            method=data["method"],
            fit_groups=data["G"],
            smce=data["smce"],
            smce_delta=data["smce_delta"],
            gmce=tuple(data["gmce"]),
            gmce_delta=None if data["gmce_delta"] is None else tuple(data["gmce_delta"]),
        )


@dataclass(frozen=True)
class GroupStatisticsRow:
    """Per-group data statistics (reported 1-based, matching the group columns)."""

    group: int
    N: int
    tag_types: int
    min_train_freq: float
    max_train_freq: float
    tokens: int

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "N": self.N,
            "tag_types": self.tag_types,
            "min_train_freq": self.min_train_freq,
            "max_train_freq": self.max_train_freq,
            "tokens": self.tokens,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroupStatisticsRow":
        return cls(**{k: data[k] for k in
                      ("group", "N", "tag_types", "min_train_freq", "max_train_freq", "tokens")})


@dataclass(frozen=True)
class ConditionError:
    """A condition that aborted; other conditions continue."""

    method: str
    fit_groups: int | None
    message: str

    def to_dict(self) -> dict:
        return {"method": self.method, "G": self.fit_groups, "message": self.message}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConditionError":
        return cls(method=data["method"], fit_groups=data["G"], message=data["message"])


@dataclass(frozen=True)
class EvaluationReport:
    """Full experiment report: condition rows plus per-group statistics."""

    metadata: Mapping
    rows: tuple[ConditionRow, ...]
    group_statistics: tuple[GroupStatisticsRow, ...]
    errors: tuple[ConditionError, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "metadata", dict(self.metadata))
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "group_statistics", tuple(self.group_statistics))
        object.__setattr__(self, "errors", tuple(self.errors))

    def to_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "rows": [row.to_dict() for row in self.rows],
            "group_statistics": [row.to_dict() for row in self.group_statistics],
            "errors": [err.to_dict() for err in self.errors],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvaluationReport":
        return cls(
            metadata=dict(data["metadata"]),
            rows=tuple(ConditionRow.from_dict(r) for r in data["rows"]),
            group_statistics=tuple(
                GroupStatisticsRow.from_dict(r) for r in data["group_statistics"]
            ),
            errors=tuple(ConditionError.from_dict(e) for e in data.get("errors", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))


def iter_pairs(pairs: Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Split (confidence, label) pairs into validated float64 arrays."""
    seq = list(pairs)
    if seq and isinstance(seq[0], ScoreRecord):
        confidences = np.asarray([r.confidence for r in seq], dtype=np.float64)
        labels = np.asarray([r.label for r in seq], dtype=np.float64)
    else:
        arr = np.asarray(seq, dtype=np.float64).reshape(-1, 2)
        confidences = np.ascontiguousarray(arr[:, 0])
        labels = np.ascontiguousarray(arr[:, 1])
    if confidences.size and (confidences.min() < 0.0 or confidences.max() > 1.0):
        raise ValidationError("confidence values must lie in [0, 1]")
    if labels.size and not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValidationError("labels must be binary (0 or 1)")
    return confidences, labels
