"""Feature encoders: multi-hot categoricals, z-scored numerics, and the
serialized free-text context consumed by the embedding component.

Encoders are fitted on an explicitly supplied training set and are
immutable afterwards; transforms are pure.  Labels first seen at
transform time are dropped into an all-zero block and tallied on an
optional counter rather than raising.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import StructuralError

if TYPE_CHECKING:  # avoids a runtime import cycle with dataio
    from .dataio import TrialRecord

CATEGORICAL_FEATURES = ("phase", "countries", "therapeutic_areas", "sponsors")
NUMERIC_FEATURES = ("planned_participants", "planned_sites")
CONTEXT_FIELDS = ("title", "objective", "mechanism_of_action", "indication",
                  "inclusion_criteria", "exclusion_criteria")

_SEPARATOR = " [SEP] "


@dataclass(frozen=True)
class MultiLabelVocab:
    """Per-feature ordered label lists learned from a training set."""

    features: tuple
    labels: tuple  # tuple of label tuples, aligned with features

    def __post_init__(self):
        for feature, feature_labels in zip(self.features, self.labels):
            if len(set(feature_labels)) != len(feature_labels):
                raise StructuralError(f"duplicate labels for feature {feature!r}")

    @property
    def width(self) -> int:
        return sum(len(ls) for ls in self.labels)

    def offsets(self) -> dict:
        out, start = {}, 0
        for feature, feature_labels in zip(self.features, self.labels):
            out[feature] = (start, start + len(feature_labels))
            start += len(feature_labels)
        return out


@dataclass
class OovCounter:
    """Tally of labels seen at transform time but absent from the vocab."""

    total: int = 0
    by_feature: Counter = field(default_factory=Counter)


@dataclass(frozen=True)
class ZScoreState:
    """Training mean and population standard deviation per numeric feature."""

    features: tuple
    means: tuple
    stds: tuple


@dataclass(frozen=True)
class EncodedTrial:
    x_emb: np.ndarray
    x_cat: np.ndarray
    x_num: np.ndarray


def fit_categorical(trials) -> MultiLabelVocab:
    """Collect every label seen in training, sorted per feature."""
    trials = list(trials)
    if not trials:
        raise StructuralError("fit_categorical needs a nonempty training set")
    labels = []
    for feature in CATEGORICAL_FEATURES:
        seen = set()
        for trial in trials:
            seen.update(getattr(trial, feature))
        labels.append(tuple(sorted(seen)))
    return MultiLabelVocab(CATEGORICAL_FEATURES, tuple(labels))


def transform_categorical(vocab: MultiLabelVocab, trial,
                          oov: OovCounter | None = None) -> np.ndarray:
    out = np.zeros(vocab.width, dtype=np.float64)
    start = 0
    for feature, feature_labels in zip(vocab.features, vocab.labels):
        index = {label: k for k, label in enumerate(feature_labels)}
        for label in getattr(trial, feature):
            k = index.get(label)
            if k is None:
                if oov is not None:
                    oov.total += 1
                    oov.by_feature[feature] += 1
            else:
                out[start + k] = 1.0
        start += len(feature_labels)
    return out


def fit_zscore(trials) -> ZScoreState:
    trials = list(trials)
    if not trials:
        raise StructuralError("fit_zscore needs a nonempty training set")
    means, stds = [], []
    for feature in NUMERIC_FEATURES:
        column = np.array([float(getattr(t, feature)) for t in trials])
        means.append(float(column.mean()))
        stds.append(float(column.std()))  # population std
    return ZScoreState(NUMERIC_FEATURES, tuple(means), tuple(stds))


def transform_zscore(state: ZScoreState, trial) -> np.ndarray:
    out = np.zeros(len(state.features), dtype=np.float64)
    for j, feature in enumerate(state.features):
        if state.stds[j] > 0.0:
            out[j] = (float(getattr(trial, feature)) - state.means[j]) / state.stds[j]
    return out


def serialize_context(trial) -> str:
    """Fixed-order 'field: value' text joined by the separator token.

    Values containing the literal separator are de-fanged so the overall
    serialization stays parseable.
    """
    parts = []
    for name in CONTEXT_FIELDS:
        value = getattr(trial, name, None) or ""
        if _SEPARATOR in value:
            value = value.replace(_SEPARATOR, " / ")
        parts.append(f"{name}: {value}")
    return _SEPARATOR.join(parts)


def encode_trial(vocab: MultiLabelVocab, state: ZScoreState, trial,
                 embedding_row: np.ndarray,
                 oov: OovCounter | None = None) -> EncodedTrial:
    return EncodedTrial(
        x_emb=np.asarray(embedding_row, dtype=np.float64),
        x_cat=transform_categorical(vocab, trial, oov),
        x_num=transform_zscore(state, trial),
    )
