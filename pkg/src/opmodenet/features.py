"""Per-link model input assembly: imputation, standardization, one-hot
encoding, and PCA-reduced town imagery embeddings.

The encoder is fitted on the training split only and persisted as JSON so
inference (including transfer to another city) reuses identical statistics.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .roadnet import RoadLink
from .traffic import LinkTrafficState

log = logging.getLogger(__name__)

EMBEDDING_DIM = 512
VARIANCE_TARGET = 0.95

NUMERIC_FIELDS = [
    "peak_hour_flow",
    "length_m",
    "lanes",
    "speed_limit_mph",
    "congested_speed_mph",
    "grade",
    "capacity_vph",
    "aadt",
    "free_flow_speed_mph",
]
CATEGORICAL_FIELDS = ["road_type", "one_way", "urban_type", "functional_class"]
OOV = "other"


@dataclass(frozen=True)
class TownEmbedding:
    town_id: str
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))
        if self.vector.shape != (EMBEDDING_DIM,):
            raise ValidationError(
                f"town {self.town_id}: embedding must have {EMBEDDING_DIM} components, got {self.vector.shape}"
            )


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Read the (town_id, v0..v511) embeddings CSV contract."""
    out: dict[str, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "town_id":
            raise ValidationError("embeddings CSV must start with a town_id column")
        for row in reader:
            vec = np.array([float(v) for v in row[1:]])
            out[row[0]] = TownEmbedding(row[0], vec).vector
    return out


@dataclass
class FittedEncoder:
    numeric_fields: list[str]  # after constant-column pruning
    means: np.ndarray
    stds: np.ndarray
    dropped_constant: list[str]
    vocab: dict[str, list[str]]  # categorical field -> sorted values + OOV slot
    pca_mean: np.ndarray
    pca_components: np.ndarray  # (k, embedding dim), rows orthonormal
    explained_variance: np.ndarray  # all eigenvalues, descending
    variance_target: float
    limit_by_class: dict[str, float] = field(default_factory=dict)
    global_limit: float = 30.0

    @property
    def n_components(self) -> int:
        return self.pca_components.shape[0]

    def feature_names(self) -> list[str]:
        names = [f"num:{f}" for f in self.numeric_fields]
        for cat in CATEGORICAL_FIELDS:
            names += [f"cat:{cat}={v}" for v in self.vocab[cat]]
        names += [f"img:pc{i}" for i in range(self.n_components)]
        return names

    def to_json(self) -> str:
        payload = {
            "numeric_fields": self.numeric_fields,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "dropped_constant": self.dropped_constant,
            "vocab": self.vocab,
            "pca_mean": self.pca_mean.tolist(),
            "pca_components": self.pca_components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "variance_target": self.variance_target,
            "limit_by_class": self.limit_by_class,
            "global_limit": self.global_limit,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedEncoder":
        p = json.loads(text)
        return cls(
            numeric_fields=p["numeric_fields"],
            means=np.array(p["means"]),
            stds=np.array(p["stds"]),
            dropped_constant=p["dropped_constant"],
            vocab=p["vocab"],
            pca_mean=np.array(p["pca_mean"]),
            pca_components=np.array(p["pca_components"]),
            explained_variance=np.array(p["explained_variance"]),
            variance_target=p["variance_target"],
            limit_by_class=p["limit_by_class"],
            global_limit=p["global_limit"],
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def limit_stats(links: list[RoadLink]) -> tuple[dict[str, float], float]:
    """Mean observed speed limit per road-type class, plus the global mean."""
    by_class: dict[str, list[float]] = {}
    all_limits: list[float] = []
    for link in links:
        if link.speed_limit_mph is not None:
            by_class.setdefault(link.road_type, []).append(link.speed_limit_mph)
            all_limits.append(link.speed_limit_mph)
    global_mean = float(np.mean(all_limits)) if all_limits else 30.0
    return {k: float(np.mean(v)) for k, v in sorted(by_class.items())}, global_mean


def impute(link: RoadLink, encoder: FittedEncoder, has_reverse: bool | None = None) -> RoadLink:
    """Fill the fields the model requires.

    Missing one-way comes from edge directionality (a directed link with no
    reverse counterpart is one-way); missing speed limit from the mean limit
    of the same road-type class, falling back to the global mean.
    """
    updates = {}
    if link.one_way is None and has_reverse is not None:
        updates["one_way"] = not has_reverse
    if link.speed_limit_mph is None:
        limit = encoder.limit_by_class.get(link.road_type)
        if limit is None:
            log.warning(
                "road class %r has no observed limits; global mean used for %s",
                link.road_type,
                link.link_id,
            )
            limit = encoder.global_limit
        updates["speed_limit_mph"] = limit
    if link.lanes is None:
        updates["lanes"] = 1
    if updates:
        link = replace(link, **updates)
    if link.free_flow_speed_mph is None:
        link = replace(link, free_flow_speed_mph=link.speed_limit_mph)
    return link


def impute_all(links: list[RoadLink], encoder: FittedEncoder) -> list[RoadLink]:
    directed = {(l.from_node, l.to_node) for l in links}
    return [
        impute(link, encoder, has_reverse=(link.to_node, link.from_node) in directed)
        for link in links
    ]


def _numeric_row(link: RoadLink, state: LinkTrafficState) -> dict[str, float]:
    return {
        "peak_hour_flow": state.peak_hour_flow_vph,
        "length_m": link.length_m,
        "lanes": float(link.lanes if link.lanes is not None else 1),
        "speed_limit_mph": float(link.speed_limit_mph or 0.0),
        "congested_speed_mph": state.congested_speed_mph,
        "grade": link.grade,
        "capacity_vph": float(link.capacity_vph or 0.0),
        "aadt": float(link.aadt or 0.0),
        "free_flow_speed_mph": float(link.free_flow_speed_mph or 0.0),
    }


def fit_pca(matrix: np.ndarray, variance_target: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """PCA by SVD of the centered matrix.

    Returns (mean, components ordered by descending variance, explained
    variances, k) where k is the smallest count reaching the cumulative
    variance target.
    """
    if matrix.shape[0] < 2:
        raise ValidationError("PCA needs at least 2 samples")
    mean = matrix.mean(axis=0)
    centered = matrix - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    explained = svals**2 / (matrix.shape[0] - 1)
    total = explained.sum()
    if total <= 0.0:
        raise ValidationError("degenerate embeddings: zero variance, PCA undefined")
    rank = int(np.sum(svals > svals[0] * 1e-12))
    cumvar = np.cumsum(explained[:rank]) / total
    k = int(np.searchsorted(cumvar, variance_target - 1e-12) + 1)
    k = min(k, rank)
    return mean, vt[:rank], explained[:rank], k


def fit_encoder(
    train_links: list[RoadLink],
    train_states: list[LinkTrafficState],
    town_embeddings: dict[str, np.ndarray],
    variance_target: float = VARIANCE_TARGET,
) -> FittedEncoder:
    """Fit standardization, vocabularies, imputation stats, and imagery PCA
    on the training split only."""
    if len(train_links) < 2:
        raise ValidationError("encoder needs at least 2 training samples")
    if len(town_embeddings) < 2:
        raise ValidationError("PCA needs embeddings for at least 2 towns")

    limits, global_limit = limit_stats(train_links)
    stub = FittedEncoder(
        numeric_fields=[],
        means=np.empty(0),
        stds=np.empty(0),
        dropped_constant=[],
        vocab={},
        pca_mean=np.empty(0),
        pca_components=np.empty((0, 0)),
        explained_variance=np.empty(0),
        variance_target=variance_target,
        limit_by_class=limits,
        global_limit=global_limit,
    )
    completed = impute_all(train_links, stub)

    rows = [_numeric_row(l, s) for l, s in zip(completed, train_states)]
    mat = np.array([[r[f] for f in NUMERIC_FIELDS] for r in rows])
    means = mat.mean(axis=0)
    stds = mat.std(axis=0)
    kept, dropped = [], []
    for i, name in enumerate(NUMERIC_FIELDS):
        # constant columns can pick up ~1e-18 of rounding noise in the std;
        # treat those as constant too or standardization amplifies the noise
        floor = 1e-12 * max(1.0, abs(means[i]))
        (kept if stds[i] > floor else dropped).append(name)
    if dropped:
        log.info("dropping constant numeric features: %s", dropped)
    keep_idx = [NUMERIC_FIELDS.index(f) for f in kept]

    vocab: dict[str, list[str]] = {}
    for cat in CATEGORICAL_FIELDS:
        values = sorted({_categorical_value(l, cat) for l in completed} - {OOV})
        vocab[cat] = values + [OOV]

    emb_matrix = np.array([town_embeddings[t] for t in sorted(town_embeddings)])
    pca_mean, components, explained, k = fit_pca(emb_matrix, variance_target)

    return FittedEncoder(
        numeric_fields=kept,
        means=means[keep_idx],
        stds=stds[keep_idx],
        dropped_constant=dropped,
        vocab=vocab,
        pca_mean=pca_mean,
        pca_components=components[:k],
        explained_variance=explained,
        variance_target=variance_target,
        limit_by_class=limits,
        global_limit=global_limit,
    )


def _categorical_value(link: RoadLink, cat: str) -> str:
    value = getattr(link, cat if cat != "one_way" else "one_way")
    if value is None:
        return OOV
    if cat == "one_way":
        return "yes" if value else "no"
    return str(value)


def encode(
    link: RoadLink,
    state: LinkTrafficState,
    embedding: np.ndarray,
    encoder: FittedEncoder,
) -> np.ndarray:
    """Standardized numeric block + one-hot block + PCA imagery block."""
    row = _numeric_row(link, state)
    numeric = np.array(
        [(row[f] - m) / s for f, m, s in zip(encoder.numeric_fields, encoder.means, encoder.stds)]
    )
    cats = []
    for cat in CATEGORICAL_FIELDS:
        vec = np.zeros(len(encoder.vocab[cat]))
        value = _categorical_value(link, cat)
        slots = encoder.vocab[cat]
        vec[slots.index(value) if value in slots else len(slots) - 1] = 1.0
        cats.append(vec)
    imagery = encoder.pca_components @ (np.asarray(embedding, dtype=float) - encoder.pca_mean)
    return np.concatenate([numeric, *cats, imagery])
