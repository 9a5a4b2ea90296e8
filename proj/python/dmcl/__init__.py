"""DMCL zero-shot domain adaptation: Python front end to the C++ core."""

import json

from . import _dmcl
from ._dmcl import (
    ConfigError,
    DataError,
    Dataset,
    Error,
    NumericError,
    Run,
    ShapeError,
    cross_entropy,
    disentanglement_score,
    domain_loss,
    load_checkpoint,
    mix,
    mixed_domain_loss,
    nt_xent,
    preset_names,
    sample_lambda,
    synthesize,
    to_edge,
    to_negative,
)

__all__ = [
    "ConfigError", "DataError", "Dataset", "Error", "NumericError", "Run", "ShapeError",
    "cross_entropy", "disentanglement_score", "domain_loss", "load_checkpoint", "mix",
    "mixed_domain_loss", "nt_xent", "preset", "preset_names", "run_ablation", "sample_lambda",
    "synthesize", "to_edge", "to_negative", "train",
]


def preset(name):
    """Configuration dict {"architecture": ..., "train_config": ...} of a named preset."""
    return json.loads(_dmcl.preset_json(name))


def _merge(base, overrides):
    out = dict(base)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def train(dataset, config="desk", overrides=None, checkpoint_dir="", progress=None):
    """Train on `dataset`. `config` is a preset name or a full config dict;
    `overrides` is merged into it key by key."""
    cfg = preset(config) if isinstance(config, str) else config
    return _dmcl.train(dataset, json.dumps(_merge(cfg, overrides)), str(checkpoint_dir), progress)


def run_ablation(dataset, config="desk", overrides=None, n_seeds=3, variants=(), output_dir=""):
    """Train and evaluate the ablation variants; one dict per (seed, variant)."""
    cfg = preset(config) if isinstance(config, str) else config
    return _dmcl.run_ablation(dataset, json.dumps(_merge(cfg, overrides)), n_seeds,
                              list(variants), str(output_dir))
