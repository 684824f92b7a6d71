"""Training-free test-time adaptation with an online prototype cache.

The usual entry point is :class:`Adapter`; the CLI lives in :mod:`protoadapt.cli`.
"""

from .adapter import Adapter, AdapterConfig, SamplePrediction
from .baselines import ConfidenceCache, ZeroShot
from .proto_cache import ClassEmbeddings, PrototypeCache
from .streams import Stream, SynthSpec, gen_class_embeddings, gen_stream

__all__ = [
    "Adapter",
    "AdapterConfig",
    "ClassEmbeddings",
    "ConfidenceCache",
    "PrototypeCache",
    "SamplePrediction",
    "Stream",
    "SynthSpec",
    "ZeroShot",
    "gen_class_embeddings",
    "gen_stream",
]
