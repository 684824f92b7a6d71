"""Comparison methods sharing the adapter's ``process`` interface."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterConfig, SamplePrediction, prepare_feature, zero_shot_prediction
from .fuse import cache_logits, class_normalizer, entropy_fuse
from .proto_cache import ClassEmbeddings, predict_main
from .reassign import CGConfig, HardLabels, harden, reassignment_flips, smooth_labels
from .numerics import softmax


@dataclass(frozen=True)
class ConfidenceCacheEntry:
    feature: np.ndarray
    entropy: float


class ConfidenceCache:
    """Keeps the ``N`` lowest-entropy raw features per predicted class.

    Cache logits and fusion are the same as the adapter's; only the caching
    rule differs. Graph smoothing is off unless ``smooth=True``.
    """

    def __init__(self, W: ClassEmbeddings, cfg: AdapterConfig = AdapterConfig(), smooth: bool = False):
        cfg.validate()
        if not isinstance(W, ClassEmbeddings):
            W = ClassEmbeddings.from_rows(W)
        self.W = W
        self.cfg = cfg
        self.smooth = smooth
        self.reset()

    def reset(self) -> None:
        self.entries: list[list[ConfidenceCacheEntry]] = [[] for _ in range(self.W.num_classes)]
        self._keys: list[list[float]] = [[] for _ in range(self.W.num_classes)]
        self.samples_seen = 0
        self.total_flips = 0

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(e) for e in self.entries], dtype=np.int64)

    def insert(self, k: int, f: np.ndarray, entropy: float) -> None:
        keys = self._keys[k]
        # equal entropies keep arrival order; the newest equal entry is evicted first
        pos = bisect.bisect_right(keys, entropy)
        keys.insert(pos, entropy)
        self.entries[k].insert(pos, ConfidenceCacheEntry(f, entropy))
        if len(keys) > self.cfg.capacity_N:
            keys.pop()
            self.entries[k].pop()

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        feats = [e.feature for entries in self.entries for e in entries]
        labels = [k for k, entries in enumerate(self.entries) for _ in entries]
        return np.array(feats), np.array(labels, dtype=np.int64)

    def process(self, f) -> SamplePrediction:
        f = prepare_feature(f, self.W.dim, self.samples_seen)
        cfg = self.cfg
        pred = predict_main(f, self.W, cfg.tau)
        self.insert(pred.pseudo_class, f, pred.entropy)
        self.samples_seen += 1

        U, origin = self.stacked()
        if self.smooth:
            Z0 = softmax(U @ self.W.rows.T, cfg.tau)
            Zstar, _ = smooth_labels(
                U, Z0, cfg.gamma, cfg.lambda_reg, CGConfig(cfg.cg_tol, cfg.cg_max_iter)
            )
            labels = harden(Zstar)
            flips = reassignment_flips(labels, origin)
            self.total_flips += flips
        else:
            labels = HardLabels.from_assignment(origin, self.W.num_classes)
            flips = 0
        s_cache = cache_logits(U, labels.onehot, class_normalizer(labels.onehot), f)
        s_final, weights = entropy_fuse(pred.scores, s_cache, cfg.tau)
        return SamplePrediction(
            final_class=int(np.argmax(s_final)),
            s_final=s_final,
            s_main=pred.scores,
            s_cache=s_cache,
            h_main=weights.h_main,
            h_cache=weights.h_cache,
            used_cache=True,
            flips=flips,
        )

    def run(self, features) -> list[SamplePrediction]:
        return [self.process(f) for f in features]


def zeroshot_process(W: ClassEmbeddings, f, tau: float = 1.0) -> SamplePrediction:
    pred = predict_main(np.asarray(f, dtype=np.float64), W, tau)
    return zero_shot_prediction(pred.scores, pred.entropy)


class ZeroShot:
    """Stateless passthrough of the zero-shot scores."""

    def __init__(self, W: ClassEmbeddings, cfg: AdapterConfig = AdapterConfig()):
        if not isinstance(W, ClassEmbeddings):
            W = ClassEmbeddings.from_rows(W)
        self.W = W
        self.cfg = cfg
        self.samples_seen = 0
        self.total_flips = 0

    def reset(self) -> None:
        self.samples_seen = 0

    def process(self, f) -> SamplePrediction:
        f = prepare_feature(f, self.W.dim, self.samples_seen)
        self.samples_seen += 1
        return zeroshot_process(self.W, f, self.cfg.tau)

    def run(self, features) -> list[SamplePrediction]:
        return [self.process(f) for f in features]
