"""Prior meta-training, fine-tuning and the three evaluation modes.

The prior is trained with a first-order bi-level scheme: per mini-batch every
task ``j`` adapts a clone of ``theta`` with one Adam step on its support
samples and one on its query samples, and the adapted parameters are pulled
back into ``theta`` with :func:`cmrmeta.nn.param_axpy`. Fine-tuning swaps the
output layer for the new classes and trains with Adam on the few labelled
samples.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (DatasetSplits, LabelledSample, MetaTrainSet, TrainingView, assign_temporary_label,
                   iter_minibatches, make_meta_train, no_peek, stratified_order)
from .nn import (AdamState, BatchNormState, ModelSpec, ParamSet, adam_step, backward, forward, init_params,
                 param_axpy, replace_head, replace_head_bn, softmax_cross_entropy)
from .nn.checkpoint import decode_params, encode_params

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class Mode(str, enum.Enum):
    M1 = "M1"  # pooled supervised training, no meta-learning
    M2 = "M2"  # meta-training on the artefact-specific set only
    M3 = "M3"  # full algorithm: unlabelled unseen images join meta-training as class l+1


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 1e-4
    outer_lr: float = 1.0
    outer_lr_final: float | None = None
    inner_steps_support: int = 1
    inner_steps_query: int = 1
    batch: int = 64
    epochs: int = 30
    support_fraction: float = 0.5
    finetune_lr: float = 1e-4
    finetune_epochs: int | None = None
    head_only: bool = False
    outer_k: str = "present"
    seed: int = 0

    def __post_init__(self):
        if self.inner_lr < 0 or self.finetune_lr < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if not 0.0 <= self.outer_lr <= 1.0:
            raise ConfigurationError("outer_lr must lie in [0, 1]")
        if self.outer_lr_final is not None and not 0.0 <= self.outer_lr_final <= 1.0:
            raise ConfigurationError("outer_lr_final must lie in [0, 1]")
        if min(self.inner_steps_support, self.inner_steps_query, self.batch, self.epochs) < 1:
            raise ConfigurationError("steps, batch and epochs must be positive")
        if not 0.0 < self.support_fraction < 1.0:
            raise ConfigurationError("support_fraction must lie in (0, 1)")
        if self.outer_k not in ("present", "all"):
            raise ConfigurationError("outer_k must be 'present' or 'all'")

    @property
    def ft_epochs(self) -> int:
        return self.epochs if self.finetune_epochs is None else self.finetune_epochs


@dataclass
class TrainedPrior:
    params: ParamSet
    bn: BatchNormState
    spec: ModelSpec
    task_labels: tuple[int, ...]
    history: list[tuple] = field(default_factory=list)


@dataclass
class FineTunedModel:
    params: ParamSet
    spec: ModelSpec
    bn: BatchNormState
    class_map: dict[int, int]
    predict_codes: tuple[int, ...] | None = None
    history: list[tuple] = field(default_factory=list)

    @property
    def eval_codes(self) -> tuple[int, ...]:
        return self.predict_codes if self.predict_codes is not None else tuple(sorted(self.class_map))


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *tags])


def _head_labels(labels: np.ndarray, class_map: dict[int, int]) -> np.ndarray:
    """Translate label codes into 1-based head columns."""
    return np.array([class_map[int(c)] + 1 for c in labels], dtype=np.int64)


def _eta(cfg: MetaConfig, step: int, total: int) -> float:
    if cfg.outer_lr_final is None or total <= 1:
        return cfg.outer_lr
    frac = step / (total - 1)
    return cfg.outer_lr + (cfg.outer_lr_final - cfg.outer_lr) * frac


def _blend_bn(bn: BatchNormState, others: Sequence[BatchNormState], eta: float) -> BatchNormState:
    out = bn.clone()
    for stats, new in ((out.mean, [o.mean for o in others]), (out.var, [o.var for o in others])):
        for name in stats:
            mean = sum(n[name] for n in new) / len(new)
            stats[name] = mean if eta == 1 else (1.0 - eta) * stats[name] + eta * mean
    return out


def meta_train(meta: MetaTrainSet, spec: ModelSpec, cfg: MetaConfig, init: ParamSet | None = None) -> TrainedPrior:
    """Bi-level prior training over the tasks (label codes) present in ``meta``."""
    codes = meta.codes
    if len(meta) == 0:
        raise ConfigurationError("meta-train set is empty")
    if spec.n_out != len(codes):
        raise ConfigurationError(f"head width {spec.n_out} != number of task labels {len(codes)}")
    class_map = {c: i for i, c in enumerate(codes)}
    head_labels = _head_labels(meta.labels, class_map)
    theta = init_params(spec, _rng(cfg.seed, 1)) if init is None else init.clone()
    bn = BatchNormState.fresh(spec)
    rng = _rng(cfg.seed, 2)
    n_support = len(meta.support)
    batch = min(cfg.batch, n_support, len(meta.query))
    iters = max(1, n_support // batch)
    total = iters * cfg.epochs
    history: list[tuple] = []
    step = 0
    for epoch in range(cfg.epochs):
        s_batches = list(iter_minibatches(meta, "support", batch, rng))
        q_batches = list(iter_minibatches(meta, "query", batch, rng))
        for it in range(iters):
            eta = _eta(cfg, step, total)
            step += 1
            sb, qb = s_batches[it], q_batches[it % len(q_batches)]
            xs, ys = meta.images[sb], head_labels[sb]
            xq, yq = meta.images[qb], head_labels[qb]
            # one forward of the whole mini-batch at theta; each task's loss reads its own rows
            bn_s = bn.clone().train()
            logits, cache = forward(spec, theta, bn_s, xs)
            adapted, adapted_bn = [], []
            for code in codes:
                j = class_map[code] + 1
                if not (np.any(ys == j) and np.any(yq == j)):
                    log.debug("task %s absent from mini-batch %d.%d; skipped", code, epoch, it)
                    continue
                opt = AdamState.fresh(theta, lr=cfg.inner_lr)
                bn_j = bn_s.clone()
                loss, d = softmax_cross_entropy(logits, ys, ys == j)
                th = adam_step(theta, backward(cache, d), opt)
                history.append((epoch, it, code, "support", loss))
                for _ in range(cfg.inner_steps_support - 1):
                    lo, c = forward(spec, th, bn_j, xs)
                    loss, d = softmax_cross_entropy(lo, ys, ys == j)
                    th = adam_step(th, backward(c, d), opt)
                    history.append((epoch, it, code, "support", loss))
                for _ in range(cfg.inner_steps_query):
                    lo, c = forward(spec, th, bn_j, xq)
                    loss, d = softmax_cross_entropy(lo, yq, yq == j)
                    th = adam_step(th, backward(c, d), opt)
                    history.append((epoch, it, code, "query", loss))
                adapted.append(th)
                adapted_bn.append(bn_j)
            if not adapted:
                continue
            if cfg.outer_k == "all":
                # absent tasks count as theta_j = theta in the mean
                adapted = adapted + [theta] * (len(codes) - len(adapted))
                adapted_bn = adapted_bn + [bn] * (len(codes) - len(adapted_bn))
            theta = param_axpy(theta, adapted, eta)
            bn = _blend_bn(bn, adapted_bn, eta)
    return TrainedPrior(theta, bn, spec, codes, history)


def _supervised(params: ParamSet, spec: ModelSpec, bn: BatchNormState, images: np.ndarray, labels: np.ndarray,
                epochs: int, batch: int, lr: float, rng: np.random.Generator, train_names=None, history=None):
    """Plain mini-batch Adam on cross-entropy; ``labels`` are 1-based head columns."""
    opt = AdamState.fresh(params, lr=lr)
    all_idx = np.arange(len(labels))
    batch = min(batch, len(labels))
    for epoch in range(epochs):
        order = stratified_order(labels, all_idx, rng)
        for it, start in enumerate(range(0, len(order), batch)):
            idx = order[start:start + batch]
            if len(idx) < 2:
                continue  # batch-norm needs at least two samples
            bn.train()
            logits, cache = forward(spec, params, bn, images[idx])
            loss, d = softmax_cross_entropy(logits, labels[idx])
            grads = backward(cache, d)
            if train_names is not None:
                grads = ParamSet((k, g if k in train_names else np.zeros_like(g)) for k, g in grads.items())
            params = adam_step(params, grads, opt)
            if history is not None:
                history.append((epoch, it, 0, "supervised", loss))
    return params


def _stack(samples: Sequence[LabelledSample]):
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


def fine_tune(prior: TrainedPrior, labelled: Sequence[LabelledSample], cfg: MetaConfig) -> FineTunedModel:
    """New output layer for the labelled unseen classes, then Adam on all (or head-only) parameters."""
    if not labelled:
        raise ConfigurationError("no labelled samples to fine-tune on")
    images, labels = _stack(labelled)
    codes = tuple(int(c) for c in np.unique(labels))
    overlap = set(codes) & set(prior.task_labels)
    if overlap:
        raise ConfigurationError(f"fine-tune labels {sorted(overlap)} overlap prior task labels")
    class_map = {c: i for i, c in enumerate(codes)}
    params, spec = replace_head(prior.params, prior.spec, len(codes), _rng(cfg.seed, 3))
    bn = replace_head_bn(prior.bn, spec)
    train_names = None
    if cfg.head_only:
        train_names = {k for k in params.names() if k.startswith(spec.head_layer_names[-1] + ".")}
    history: list[tuple] = []
    params = _supervised(params, spec, bn, images, _head_labels(labels, class_map), cfg.ft_epochs, cfg.batch,
                         cfg.finetune_lr, _rng(cfg.seed, 4), train_names, history)
    return FineTunedModel(params, spec, bn, class_map, history=history)


def predict_logits(model: FineTunedModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    bn = model.bn.clone().eval()
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (model.spec.input_size,) * 2:
        raise ValueError(f"images must be (N, {model.spec.input_size}, {model.spec.input_size})")
    out = [forward(model.spec, model.params, bn, images[i:i + chunk])[0] for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.n_out))


def predict_from_logits(logits: np.ndarray, class_map: dict[int, int], codes: Sequence[int]) -> np.ndarray:
    """Argmax over the columns of ``codes``; ties go to the lowest head index."""
    codes = sorted(codes, key=lambda c: class_map[c])
    cols = [class_map[c] for c in codes]
    if len(logits) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.asarray(codes, dtype=np.int64)[np.argmax(logits[:, cols], axis=1)]


def predict(model: FineTunedModel, images: np.ndarray) -> np.ndarray:
    return predict_from_logits(predict_logits(model, images), model.class_map, model.eval_codes)


def run_mode(mode: Mode | str, splits: DatasetSplits | TrainingView, spec: ModelSpec,
             cfg: MetaConfig) -> FineTunedModel:
    """Train one of the three modes. Hidden test labels are unreachable throughout."""
    mode = Mode(mode)
    view = splits.training_view() if isinstance(splits, DatasetSplits) else splits
    with no_peek():
        if mode is Mode.M1:
            return _run_pooled(view, spec, cfg)
        l = len(view.prior_codes)
        assigned: list[LabelledSample] = []
        if mode is Mode.M3 and len(view.unseen_unlabelled):
            assigned = assign_temporary_label(view.unseen_unlabelled, l)
        meta = make_meta_train(view.artefact_specific, assigned, cfg.support_fraction, cfg.seed)
        prior_spec = ModelSpec(**{**asdict(spec), "n_out": len(meta.codes)})
        prior = meta_train(meta, prior_spec, cfg)
        return fine_tune(prior, view.unseen_labelled, cfg)


def _run_pooled(view: TrainingView, spec: ModelSpec, cfg: MetaConfig) -> FineTunedModel:
    samples = list(view.artefact_specific) + list(view.unseen_labelled)
    images, labels = _stack(samples)
    codes = tuple(int(c) for c in np.unique(labels))
    class_map = {c: i for i, c in enumerate(codes)}
    pooled_spec = ModelSpec(**{**asdict(spec), "n_out": len(codes)})
    params = init_params(pooled_spec, _rng(cfg.seed, 1))
    bn = BatchNormState.fresh(pooled_spec)
    history: list[tuple] = []
    params = _supervised(params, pooled_spec, bn, images, _head_labels(labels, class_map), cfg.epochs, cfg.batch,
                         cfg.finetune_lr, _rng(cfg.seed, 5), history=history)
    return FineTunedModel(params, pooled_spec, bn, class_map, predict_codes=tuple(view.finetune_codes),
                          history=history)


def history_csv(history: Sequence[tuple]) -> str:
    lines = ["epoch,iteration,task,phase,loss"]
    lines += [f"{e},{i},{t},{p},{loss:.10g}" for e, i, t, p, loss in history]
    return "\n".join(lines) + "\n"


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model: FineTunedModel, path: str | Path, header: dict | None = None) -> Path:
    """ParamSet records for weights and batch-norm statistics plus a JSON header."""
    path = Path(path)
    records = model.params.clone()
    for name in model.spec.head_layer_names:
        records[f"bn.{name}.mean"] = model.bn.mean[name]
        records[f"bn.{name}.var"] = model.bn.var[name]
    path.write_bytes(encode_params(records))
    meta = {
        "header": header or {},
        "spec": asdict(model.spec),
        "class_map": {str(k): v for k, v in model.class_map.items()},
        "predict_codes": list(model.predict_codes) if model.predict_codes is not None else None,
        "bn_momentum": model.bn.momentum,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[FineTunedModel, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    sd = meta["spec"]
    spec = ModelSpec(**{**sd, "conv_channels": tuple(sd["conv_channels"]), "head_widths": tuple(sd["head_widths"])})
    records = decode_params(path.read_bytes())
    params = ParamSet((k, v.astype(spec.dtype)) for k, v in records.items() if not k.startswith("bn."))
    bn = BatchNormState(
        {n: records[f"bn.{n}.mean"].astype(spec.dtype) for n in spec.head_layer_names},
        {n: records[f"bn.{n}.var"].astype(spec.dtype) for n in spec.head_layer_names},
        meta["bn_momentum"], training=False)
    class_map = {int(k): v for k, v in meta["class_map"].items()}
    codes = tuple(meta["predict_codes"]) if meta["predict_codes"] is not None else None
    return FineTunedModel(params, spec, bn, class_map, codes), meta["header"]
