"""The streaming adapter: one feature in, one fused prediction out."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AdapterError, DimMismatch, InvalidConfig, SampleError
from .fuse import ClassNormalizer, cache_logits, class_normalizer, entropy_fuse
from .proto_cache import (
    ClassEmbeddings,
    InsertPolicy,
    PrototypeCache,
    predict_main,
    snapshot,
    update_or_insert,
)
from .reassign import CGConfig, HardLabels, harden, reassignment_flips, smooth_labels

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6
STAGES = ("prototyping", "smoothing", "fusion")


@dataclass(frozen=True)
class AdapterConfig:
    """Hyperparameters of the adapter.

    ``reassign_every=None`` disables the cache branch entirely, which makes
    the adapter reproduce the zero-shot classifier.
    """

    beta: float = 10.0
    gamma: float = 0.5
    lambda_reg: float = 0.3
    capacity_N: int = 30
    tau: float = 1.0
    cg_tol: float = 1e-6
    cg_max_iter: int = 100
    reassign_every: int | None = 1
    insert_policy: str = InsertPolicy.ALWAYS_FILL.value
    merge_similarity: float = 0.9
    persist_reassignment: bool = False

    def validate(self) -> None:
        checks = [
            ("beta", math.isfinite(self.beta) and self.beta >= 0, "must be finite and >= 0"),
            ("gamma", 0.0 <= self.gamma <= 1.0, "must lie in [0, 1]"),
            ("lambda_reg", math.isfinite(self.lambda_reg) and self.lambda_reg >= 0, "must be >= 0"),
            ("capacity_N", isinstance(self.capacity_N, int) and self.capacity_N >= 1, "must be an integer >= 1"),
            ("tau", math.isfinite(self.tau) and self.tau > 0, "must be > 0"),
            ("cg_tol", self.cg_tol > 0, "must be > 0"),
            ("cg_max_iter", isinstance(self.cg_max_iter, int) and self.cg_max_iter >= 1, "must be an integer >= 1"),
            (
                "reassign_every",
                self.reassign_every is None
                or (isinstance(self.reassign_every, int) and self.reassign_every >= 1),
                "must be an integer >= 1 or None",
            ),
            ("insert_policy", self.insert_policy in {p.value for p in InsertPolicy}, "unknown policy"),
            ("merge_similarity", -1.0 <= self.merge_similarity <= 1.0, "must lie in [-1, 1]"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise InvalidConfig(name, f"{msg} (got {getattr(self, name)!r})")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SamplePrediction:
    final_class: int
    s_final: np.ndarray
    s_main: np.ndarray
    s_cache: np.ndarray
    h_main: float
    h_cache: float
    used_cache: bool
    flips: int


@dataclass(frozen=True)
class _Hardened:
    U: np.ndarray
    labels: HardLabels
    norm: ClassNormalizer
    flips: int


def zero_shot_prediction(s_main: np.ndarray, h_main: float) -> SamplePrediction:
    return SamplePrediction(
        final_class=int(np.argmax(s_main)),
        s_final=s_main,
        s_main=s_main,
        s_cache=np.zeros_like(s_main),
        h_main=h_main,
        h_cache=float("nan"),
        used_cache=False,
        flips=0,
    )


def prepare_feature(f, dim: int, index: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != dim:
        raise DimMismatch(f"sample {index}: feature has shape {f.shape}, expected ({dim},)")
    n = np.linalg.norm(f)
    if abs(n - 1.0) > UNIT_TOL:
        if n < 1e-12 or not np.isfinite(n):
            raise SampleError(index, ValueError(f"feature norm {n} cannot be normalized"))
        log.warning("sample %d: feature norm %.6g, normalizing", index, n)
        f = f / n
    return f


class Adapter:
    """Training-free test-time adapter over a fixed set of class embeddings."""

    def __init__(self, W: ClassEmbeddings, cfg: AdapterConfig = AdapterConfig()):
        cfg.validate()
        if not isinstance(W, ClassEmbeddings):
            W = ClassEmbeddings.from_rows(W)
        self.W = W
        self.cfg = cfg
        self.cache = PrototypeCache(W.num_classes, W.dim, cfg.capacity_N)
        self._cg = CGConfig(cfg.cg_tol, cfg.cg_max_iter)
        self.reset()

    def reset(self) -> None:
        self.cache.reset()
        self.samples_seen = 0
        self.total_flips = 0
        self.cg_iterations = 0
        self._hardened: _Hardened | None = None
        self.stage_seconds = dict.fromkeys(STAGES, 0.0)

    def _due(self, t: int) -> bool:
        every = self.cfg.reassign_every
        return every is not None and t % every == 0

    def _reassign(self) -> _Hardened:
        cfg = self.cfg
        # the gram view is consumed before the cache changes again
        snap = snapshot(self.cache, self.W, cfg.tau, copy_gram=False)
        Zstar, report = smooth_labels(
            snap.U, snap.Z0, cfg.gamma, cfg.lambda_reg, self._cg, gram=snap.gram, active=snap.slots
        )
        self.cg_iterations += int(report.iterations_per_column.sum())
        if not report.converged.all():
            log.debug("CG hit max_iter on %d column(s)", int((~report.converged).sum()))
        labels = harden(Zstar)
        flips = reassignment_flips(labels, snap.origin_class)
        self.total_flips += flips
        if cfg.persist_reassignment and flips:
            # affects later samples only; this sample fuses with the snapshot labels
            self._relocate(snap.origin_class, labels.assignment)
        return _Hardened(snap.U, labels, class_normalizer(labels.onehot), flips)

    def _relocate(self, origin: np.ndarray, assignment: np.ndarray) -> None:
        # walk back to front so earlier slot indices stay valid while removing
        slot_in_class = np.zeros(origin.size, dtype=np.int64)
        for k in np.unique(origin):
            rows = np.flatnonzero(origin == k)
            slot_in_class[rows] = np.arange(rows.size)
        for m in range(origin.size - 1, -1, -1):
            src, dst = int(origin[m]), int(assignment[m])
            if src == dst or self.cache.class_size(dst) >= self.cache.capacity:
                continue
            n = int(slot_in_class[m])
            proto = self.cache.prototypes(src)[n]
            self.cache.remove(src, n)
            self.cache.insert(dst, proto.center, proto.count)

    def process(self, f) -> SamplePrediction:
        """Run one sample through prototyping, reassignment and fusion."""
        t = self.samples_seen + 1
        f = prepare_feature(f, self.W.dim, t - 1)
        cfg = self.cfg
        try:
            t0 = time.perf_counter()
            pred = predict_main(f, self.W, cfg.tau)
            if cfg.reassign_every is not None:
                update_or_insert(
                    self.cache, f, pred, self.W, cfg.beta, cfg.tau,
                    cfg.insert_policy, cfg.merge_similarity,
                )
            t1 = time.perf_counter()
            if self._due(t) and self.cache.total >= 1:
                self._hardened = self._reassign()
            t2 = time.perf_counter()
            if self._hardened is None:
                out = zero_shot_prediction(pred.scores, pred.entropy)
            else:
                h = self._hardened
                s_cache = cache_logits(h.U, h.labels.onehot, h.norm, f)
                s_final, weights = entropy_fuse(pred.scores, s_cache, cfg.tau)
                out = SamplePrediction(
                    final_class=int(np.argmax(s_final)),
                    s_final=s_final,
                    s_main=pred.scores,
                    s_cache=s_cache,
                    h_main=weights.h_main,
                    h_cache=weights.h_cache,
                    used_cache=True,
                    flips=h.flips,
                )
            t3 = time.perf_counter()
        except AdapterError as exc:
            if isinstance(exc, (SampleError, DimMismatch)):
                raise
            raise SampleError(t - 1, exc) from exc
        except (ArithmeticError, ValueError) as exc:
            raise SampleError(t - 1, exc) from exc
        self.samples_seen = t
        self.stage_seconds["prototyping"] += t1 - t0
        self.stage_seconds["smoothing"] += t2 - t1
        self.stage_seconds["fusion"] += t3 - t2
        return out

    def run(self, features) -> list[SamplePrediction]:
        return [self.process(f) for f in features]
