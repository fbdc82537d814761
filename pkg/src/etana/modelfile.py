"""Versioned on-disk format for trained models.

A model file is an uncompressed ``.npz`` archive: raw arrays for every
numeric part plus a ``meta`` entry holding a JSON header with the format
version, policy kind, dimensions and training metadata.  Arrays are stored
as-is, so a save/load cycle is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .estimation import FeatureOrder, LikelihoodTable, Quantizer
from .fetana import ThresholdSet
from .probability import CostModel
from .runtime import TrainedModel
from .solver import ValueTable, build_simplex_grid

FORMAT_NAME = "etana-model"
FORMAT_VERSION = 1


class ModelFormatError(DataError):
    pass


def save_model(model: TrainedModel, path) -> Path:
    path = Path(path)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "n_bins": model.n_bins,
        "classes": list(model.classes),
        "meta": model.meta,
    }
    arrays = {
        "priors": model.priors,
        "edges": model.quantizer.edges,
        "likelihoods": model.likelihoods.table,
        "order": model.order.permutation,
        "order_scores": model.order.scores,
        "feature_costs": model.costs.feature_costs,
        "misclass": model.costs.misclass,
    }
    if model.kind == "etana":
        arrays["values"] = model.policy.values
        header["grid_resolution"] = model.policy.grid.resolution
    else:
        arrays["theta"] = model.policy.theta
    arrays["meta"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    # np.savez appends .npz to bare names; open the file ourselves to keep the path
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ModelFormatError(f"{path}: not a readable model file ({exc})") from None
    with archive:
        if "meta" not in archive:
            raise ModelFormatError(f"{path}: missing model header")
        header = json.loads(archive["meta"].tobytes().decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"{path}: not an {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"{path}: model format version {header.get('version')} is not supported "
                f"(this build reads version {FORMAT_VERSION})"
            )
        a = {k: archive[k] for k in archive.files if k != "meta"}
    kind = header["kind"]
    quantizer = Quantizer(a["edges"], int(header["n_bins"]))
    lik = LikelihoodTable(a["likelihoods"])
    order = FeatureOrder(a["order"], a["order_scores"])
    costs = CostModel(a["feature_costs"], a["misclass"])
    if kind == "etana":
        grid = build_simplex_grid(int(header["n_classes"]), int(header["grid_resolution"]))
        values = a["values"]
        values.setflags(write=False)
        policy = ValueTable(values, grid)
    elif kind == "fetana":
        policy = ThresholdSet(a["theta"])
    else:
        raise ConfigError(f"{path}: unknown policy kind {kind!r}")
    model = TrainedModel(a["priors"], quantizer, lik, order, costs, kind, policy,
                         list(header.get("classes", [])), header.get("meta", {}))
    if model.n_features != header["n_features"] or model.n_classes != header["n_classes"]:
        raise ModelFormatError(f"{path}: header dimensions disagree with the stored arrays")
    return model
