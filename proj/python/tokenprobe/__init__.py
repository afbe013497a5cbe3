"""Concept-template probing of frozen ViT token features."""

import json
import os

from ._tokenprobe import (
    CLS,
    ENGINE_VERSION,
    UNLABELED,
    ConceptTemplate,
    Dataset,
    ProbeError,
    balanced_metrics,
    build_pools,
    classify,
    confusion,
    fit_cosine,
    fit_hyperplane,
    iou,
    load_templates,
    mine_hard_negatives,
    open_dataset,
    patch_labels,
    project,
    render_mask,
    search_threshold,
    write_cluster_classification,
    write_dataset,
    write_patch_segmentation,
)
from ._tokenprobe import _run_experiment


def run_experiment(config, base_dir=""):
    """Run an experiment described by a config dict; returns the report dict."""
    return json.loads(_run_experiment(json.dumps(config), os.fspath(base_dir)))


__all__ = [
    "CLS",
    "ENGINE_VERSION",
    "UNLABELED",
    "ConceptTemplate",
    "Dataset",
    "ProbeError",
    "balanced_metrics",
    "build_pools",
    "classify",
    "confusion",
    "fit_cosine",
    "fit_hyperplane",
    "iou",
    "load_templates",
    "mine_hard_negatives",
    "open_dataset",
    "patch_labels",
    "project",
    "render_mask",
    "run_experiment",
    "search_threshold",
    "write_cluster_classification",
    "write_dataset",
    "write_patch_segmentation",
]
