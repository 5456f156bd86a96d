"""Python bindings for the morelab C++ core."""

import json as _json

from ._morelab import (  # noqa: F401
    AdamWState,
    BBox,
    EvaluationError,
    FeatureFlags,
    GeneratorConfig,
    InputError,
    Instance,
    IoError,
    Model,
    ModelConfig,
    RelationSchema,
    SchemaError,
    TrainConfig,
    adamw_step,
    cohen_kappa_weighted,
    disambiguation_eval,
    generate_instance,
    gradcheck,
    position_feature,
    read_split,
    split_by_reference_ratio,
    train,
)
from . import _morelab


def generate_dataset(seed, train, dev, test, out, **kwargs):
    """Writes a corpus to `out` and returns its statistics as a dict."""
    return _json.loads(_morelab.generate_dataset(seed, train, dev, test, str(out), **kwargs))


def corpus_stats(instances, schema=None):
    schema = schema or RelationSchema()
    return _json.loads(_morelab.corpus_stats(instances, schema))


def evaluate(predicted, gold, schema=None):
    """Metrics for aligned label strings, as a dict."""
    schema = schema or RelationSchema()
    return _json.loads(_morelab.evaluate(list(predicted), list(gold), schema))
