"""Python access to the pipetune core: simulator worlds, LODO evaluation and metrics."""

import json

from ._pipetune import (
    Error,
    InvalidArgument,
    LeakageError,
    NotFound,
    SimSpec,
    World,
    matern52,
    ndcg_at_k,
    pairwise_accuracy,
    reconstruct,
    sign_test_less,
    spearman,
    update_offset,
)

__all__ = [
    "Error",
    "InvalidArgument",
    "LeakageError",
    "NotFound",
    "SimSpec",
    "World",
    "evaluate",
    "matern52",
    "ndcg_at_k",
    "optimize",
    "pairwise_accuracy",
    "reconstruct",
    "sign_test_less",
    "spearman",
    "update_offset",
]


def evaluate(world, settings=None):
    """Leave-one-dataset-out evaluation; returns (reports, summary)."""
    out = json.loads(world.run_lodo(json.dumps(settings or {})))
    return out["reports"], out["summary"]


def optimize(world, target, settings=None):
    """Train on every other dataset, then run the online loop on `target`."""
    return json.loads(world.optimize(target, json.dumps(settings or {})))
