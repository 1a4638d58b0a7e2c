"""Python interface to the shapeformer C++ core.

Configs are plain dicts with the same keys as the JSON config files; keys not
given keep their defaults.
"""

import json

from . import _core
from ._core import (
    ArtifactMismatch,
    ContractViolation,
    DataError,
    Dataset,
    InputError,
    Model,
    ParseError,
    ShapeletPool,
    SplitTag,
    VocabularyMismatch,
    cid,
    dataset_from_array,
    extract_pips,
    information_gain,
    load_checkpoint,
    load_pool,
    load_ts,
    normalize,
    psd,
    split_train_val,
    write_ts,
)

__all__ = [
    "ArtifactMismatch", "ContractViolation", "DataError", "Dataset", "InputError", "Model", "ParseError",
    "ShapeletPool", "SplitTag", "VocabularyMismatch", "cid", "dataset_from_array", "default_config", "discover",
    "evaluate", "extract_pips", "information_gain", "load_checkpoint", "load_pool", "load_ts", "normalize", "psd",
    "run_experiment", "split_train_val", "train", "write_ts",
]


def default_config():
    return json.loads(_core.default_config())


def discover(dataset, config=None):
    return _core.discover(dataset, json.dumps(config or {}))


def train(train_set, pool, config=None, validation=None):
    """Returns a Model; its report is available as ``json.loads(model.report)``."""
    return _core.train(train_set, validation, pool, json.dumps(config or {}))


def evaluate(model, dataset):
    return json.loads(model.evaluate(dataset))


def run_experiment(train_set, test_set, config=None):
    return json.loads(_core.run_experiment(train_set, test_set, json.dumps(config or {})))
