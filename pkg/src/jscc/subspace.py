"""Nearest-subspace classification on received features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FitError, ShapeError


@dataclass
class ClassSubspace:
    mean: np.ndarray      # [m]
    basis: np.ndarray     # [m, p], orthonormal columns


@dataclass
class SubspaceModel:
    classes: list         # ClassSubspace per class
    dim: int

    @property
    def num_classes(self):
        return len(self.classes)


def fit_subspaces(features, labels, policy=("fixed", 10)) -> SubspaceModel:
    """Per class: mean plus the leading principal components of the centered
    features (via SVD).

    policy ("fixed", p) keeps min(p, rank) components; ("energy", frac) keeps
    the smallest count capturing at least `frac` of the class energy.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"features {features.shape} incompatible with {labels.shape} labels")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    classes = []
    for j in range(num_classes):
        rows = features[labels == j]
        if rows.shape[0] == 0:
            raise FitError(f"class {j} has no samples")
        mean = rows.mean(axis=0)
        centered = rows - mean
        u, s, vt = np.linalg.svd(centered, full_matrices=False)
        tol = max(centered.shape) * np.finfo(float).eps * (s[0] if s.size else 0)
        rank = int(np.sum(s > tol))
        kind, value = policy
        if kind == "fixed":
            p = min(int(value), rank)
        elif kind == "energy":
            energy = np.cumsum(s ** 2)
            p = int(np.searchsorted(energy, value * energy[-1]) + 1) if rank else 0
            p = min(p, rank)
        else:
            raise ContractError(f"unknown policy {kind!r}")
        classes.append(ClassSubspace(mean=mean, basis=vt[:p].T.copy()))
    return SubspaceModel(classes=classes, dim=features.shape[1])


def residual(query, sub: ClassSubspace):
    """||(I - V V^T)(q - mu)||^2 via ||u||^2 - ||V^T u||^2; never forms the
    m x m projector."""
    u = query - sub.mean
    proj = sub.basis.T @ u
    return float(u @ u - proj @ proj)


def classify(query, model: SubspaceModel):
    """Class with the smallest projection residual; ties break to the lowest
    class index."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (model.dim,):
        raise ShapeError(f"query shape {query.shape} != ({model.dim},)")
    residuals = [residual(query, sub) for sub in model.classes]
    return int(np.argmin(residuals))


def classify_batch(queries, model: SubspaceModel):
    queries = np.asarray(queries, dtype=np.float64)
    return np.array([classify(q, model) for q in queries])


def accuracy(predictions, truth):
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ShapeError(
            f"prediction/truth lengths differ: {predictions.shape} vs {truth.shape}")
    return float(np.mean(predictions == truth))


def model_to_arrays(model: SubspaceModel):
    """Flatten a fitted model into named arrays for the checkpoint container."""
    out = {"subspace.dim": np.array(model.dim)}
    for j, sub in enumerate(model.classes):
        out[f"subspace.{j}.mean"] = sub.mean
        out[f"subspace.{j}.basis"] = sub.basis
    return out


def model_from_arrays(arrays):
    dim = int(arrays["subspace.dim"])
    classes = []
    j = 0
    while f"subspace.{j}.mean" in arrays:
        classes.append(ClassSubspace(mean=arrays[f"subspace.{j}.mean"],
                                     basis=arrays[f"subspace.{j}.basis"]))
        j += 1
    return SubspaceModel(classes=classes, dim=dim)
