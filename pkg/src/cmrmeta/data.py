"""Balanced artefact corpus, dataset splits and mini-batch sampling.

Label codes are experiment-relative: prior classes take codes ``1..l`` in
canonical class order, the temporary unlabelled class is ``l + 1`` and the
fine-tune classes take ``l + 2 ..``. Hidden ground truth for the unlabelled
split lives in :class:`HiddenLabels`, which refuses to answer while a
:func:`no_peek` guard is active; training code only ever sees
:class:`UnlabelledPool` (images and ids).
"""

from __future__ import annotations

import contextlib
import contextvars
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import pgm
from .kspace import CLASS_ORDER, ArtefactClass, ArtefactParams, ParameterError, is_power_of_two, synthesize_sample
from .phantom import generate_phantom

TEMPORARY = "Temporary"


class ConfigurationError(ValueError):
    pass


class CorpusIntegrityError(RuntimeError):
    pass


class NoPeekViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ParamRanges:
    translation_px: tuple[int, int] = (2, 6)
    sine_duty: tuple[float, float] = (0.3, 0.6)
    sine_period: tuple[float, float] = (6.0, 16.0)
    gibbs_keep_fraction: tuple[float, float] = (0.2, 0.5)
    aliasing_factor: int = 2

    def draw(self, rng: np.random.Generator) -> ArtefactParams:
        return ArtefactParams(
            translation_px=int(rng.integers(self.translation_px[0], self.translation_px[1] + 1)),
            sine_duty=float(rng.uniform(*self.sine_duty)),
            sine_period=float(rng.uniform(*self.sine_period)),
            gibbs_keep_fraction=float(rng.uniform(*self.gibbs_keep_fraction)),
            aliasing_factor=self.aliasing_factor,
            rng_seed=int(rng.integers(0, 2**63)),
        )


@dataclass(frozen=True)
class CorpusConfig:
    per_class_count: int = 512
    image_size: int = 64
    cine_frames: int = 16
    param_ranges: ParamRanges = field(default_factory=ParamRanges)
    rng_seed: int = 0

    def __post_init__(self):
        if self.per_class_count < 1:
            raise ConfigurationError("per_class_count must be positive")
        if self.image_size < 32 or not is_power_of_two(self.image_size):
            raise ConfigurationError("image_size must be a power of two >= 32")
        if self.cine_frames < 2:
            raise ConfigurationError("cine_frames must be >= 2")


@dataclass(frozen=True)
class LabelledSample:
    image: np.ndarray
    label: int
    sample_id: int


@dataclass(frozen=True)
class UnlabelledPool:
    """Images of the unseen-artefact test set, without labels."""

    images: np.ndarray
    sample_ids: tuple[int, ...]

    def __len__(self):
        return len(self.sample_ids)


_guard = contextvars.ContextVar("no_peek", default=None)


@contextlib.contextmanager
def no_peek():
    """Forbid hidden-label reads inside the block; yields the list of attempted reads."""
    attempts: list[str] = []
    token = _guard.set(attempts)
    try:
        yield attempts
    finally:
        _guard.reset(token)


class HiddenLabels:
    """Ground truth of the unlabelled split, readable only for evaluation."""

    def __init__(self, codes: dict[int, int], names: dict[int, str]):
        self.__codes = dict(codes)
        self.__names = dict(names)
        self.reads = 0

    def reveal(self, sample_ids: Sequence[int] | None = None) -> np.ndarray:
        attempts = _guard.get()
        if attempts is not None:
            attempts.append("reveal")
            raise NoPeekViolation("hidden labels read inside a training code path")
        self.reads += 1
        ids = self.__codes.keys() if sample_ids is None else sample_ids
        return np.array([self.__codes[i] for i in ids], dtype=np.int64)

    def class_names(self) -> dict[int, str]:
        """Map sample id to class name (evaluation use only)."""
        attempts = _guard.get()
        if attempts is not None:
            attempts.append("class_names")
            raise NoPeekViolation("hidden labels read inside a training code path")
        self.reads += 1
        return dict(self.__names)

    def __eq__(self, other):
        if not isinstance(other, HiddenLabels):
            return NotImplemented
        return self.__codes == other.__codes and self.__names == other.__names

    def __len__(self):
        return len(self.__codes)


@dataclass(frozen=True)
class TrainingView:
    """What training code paths receive: no hidden labels reachable."""

    artefact_specific: tuple[LabelledSample, ...]
    unseen_labelled: tuple[LabelledSample, ...]
    unseen_unlabelled: UnlabelledPool
    prior_codes: tuple[int, ...]
    finetune_codes: tuple[int, ...]


@dataclass
class DatasetSplits:
    artefact_specific: list[LabelledSample]
    unseen_labelled: list[LabelledSample]
    unseen_unlabelled: UnlabelledPool
    hidden: HiddenLabels
    class_codes: dict[str, int]
    prior_classes: tuple[str, ...]
    finetune_classes: tuple[str, ...]

    @property
    def l(self) -> int:
        return len(self.prior_classes)

    @property
    def prior_codes(self) -> tuple[int, ...]:
        return tuple(self.class_codes[c] for c in self.prior_classes)

    @property
    def finetune_codes(self) -> tuple[int, ...]:
        return tuple(self.class_codes[c] for c in self.finetune_classes)

    def training_view(self) -> TrainingView:
        return TrainingView(tuple(self.artefact_specific), tuple(self.unseen_labelled),
                            self.unseen_unlabelled, self.prior_codes, self.finetune_codes)

    def code_names(self) -> dict[int, str]:
        return {code: name for name, code in self.class_codes.items()}


def class_codes(prior: Sequence[ArtefactClass], finetune: Sequence[ArtefactClass]) -> dict[str, int]:
    l = len(prior)
    codes = {c.value: i + 1 for i, c in enumerate(prior)}
    codes[TEMPORARY] = l + 1
    codes.update({c.value: l + 2 + i for i, c in enumerate(finetune)})
    return codes


def _canonical(classes) -> tuple[ArtefactClass, ...]:
    parsed = {ArtefactClass.parse(c) for c in classes}
    return tuple(c for c in CLASS_ORDER if c in parsed)


def sample_seed(cfg: CorpusConfig, cls: ArtefactClass, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed & 0xFFFFFFFFFFFFFFFF, CLASS_ORDER.index(cls), index])


def sample_id(cls: ArtefactClass, index: int) -> int:
    return (CLASS_ORDER.index(cls) + 1) * 1_000_000 + index


def synthesize_class(cfg: CorpusConfig, cls: ArtefactClass, count: int | None = None) -> np.ndarray:
    """Images ``0..count-1`` of one class; image ``i`` depends only on (cfg, cls, i)."""
    count = cfg.per_class_count if count is None else count
    out = np.empty((count, cfg.image_size, cfg.image_size))
    for i in range(count):
        rng = sample_seed(cfg, cls, i)
        phantom_seed = int(rng.integers(0, 2**63))
        params = cfg.param_ranges.draw(rng)
        frames = cfg.cine_frames if cls is ArtefactClass.CARDIAC_MOTION else 2
        stack = generate_phantom(phantom_seed, cfg.image_size, frames)
        out[i] = pgm.quantize(synthesize_sample(stack, cls, params))
    return out


def build_corpus(cfg: CorpusConfig, prior_classes, finetune_classes, labelled_budget: int,
                 cache: dict | None = None) -> DatasetSplits:
    """Materialise the artefact-specific, labelled-unseen and unlabelled-unseen sets.

    ``cache`` (class -> image array) lets several budgets share one synthesis pass;
    images are identical either way.
    """
    prior = _canonical(prior_classes)
    finetune = _canonical(finetune_classes)
    if set(prior) & set(finetune):
        raise ConfigurationError("prior and fine-tune class sets overlap")
    if not prior or not finetune:
        raise ConfigurationError("prior and fine-tune class sets must be non-empty")
    if not 1 <= labelled_budget <= cfg.per_class_count:
        raise ConfigurationError(f"labelled_budget must be in [1, {cfg.per_class_count}]")
    codes = class_codes(prior, finetune)
    cache = {} if cache is None else cache

    def images_for(cls):
        if cls not in cache:
            cache[cls] = synthesize_class(cfg, cls)
        return cache[cls]

    specific = [LabelledSample(img, codes[cls.value], sample_id(cls, i))
                for cls in prior for i, img in enumerate(images_for(cls))]
    labelled, pool_imgs, pool_ids, hidden, names = [], [], [], {}, {}
    for cls in finetune:
        imgs = images_for(cls)
        rng = np.random.default_rng([cfg.rng_seed & 0xFFFFFFFFFFFFFFFF, 0xB0D6E7, CLASS_ORDER.index(cls)])
        order = rng.permutation(len(imgs))
        chosen = np.sort(order[:labelled_budget])
        rest = np.sort(order[labelled_budget:])
        labelled += [LabelledSample(imgs[i], codes[cls.value], sample_id(cls, int(i))) for i in chosen]
        for i in rest:
            sid = sample_id(cls, int(i))
            pool_imgs.append(imgs[i])
            pool_ids.append(sid)
            hidden[sid] = codes[cls.value]
            names[sid] = cls.value
    size = cfg.image_size
    pool = UnlabelledPool(np.array(pool_imgs).reshape(-1, size, size), tuple(pool_ids))
    return DatasetSplits(specific, labelled, pool, HiddenLabels(hidden, names), codes,
                         tuple(c.value for c in prior), tuple(c.value for c in finetune))


def assign_temporary_label(unlabelled: UnlabelledPool | Sequence[np.ndarray], l: int,
                           sample_ids: Sequence[int] | None = None) -> list[LabelledSample]:
    """Pair every unlabelled image with the temporary code ``l + 1``."""
    if l < 1:
        raise ParameterError("l must be >= 1")
    if isinstance(unlabelled, UnlabelledPool):
        images, sample_ids = unlabelled.images, unlabelled.sample_ids
    else:
        images = list(unlabelled)
        sample_ids = range(len(images)) if sample_ids is None else sample_ids
    return [LabelledSample(img, l + 1, int(sid)) for img, sid in zip(images, sample_ids)]


@dataclass(frozen=True)
class MetaTrainSet:
    images: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    support: np.ndarray
    query: np.ndarray

    def __len__(self):
        return len(self.labels)

    def part(self, name: str) -> np.ndarray:
        if name not in ("support", "query"):
            raise ParameterError(f"unknown partition {name!r}")
        return self.support if name == "support" else self.query

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator):
    support, query = [], []
    for code in np.unique(labels):
        idx = np.flatnonzero(labels == code)
        idx = idx[rng.permutation(len(idx))]
        n = int(round(fraction * len(idx)))
        support.append(idx[:n])
        query.append(idx[n:])
    return np.sort(np.concatenate(support)), np.sort(np.concatenate(query))


def make_meta_train(specific: Sequence[LabelledSample], assigned: Sequence[LabelledSample],
                    support_fraction: float = 0.5, seed: int = 0) -> MetaTrainSet:
    if not 0.0 < support_fraction < 1.0:
        raise ParameterError("support_fraction must lie in (0, 1)")
    samples = list(specific) + list(assigned)
    if not samples:
        raise ParameterError("meta-train set is empty")
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    ids = np.array([s.sample_id for s in samples], dtype=np.int64)
    support, query = stratified_split(labels, support_fraction, np.random.default_rng(seed))
    return MetaTrainSet(images, labels, ids, support, query)


def stratified_order(labels: np.ndarray, indices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle ``indices`` so every contiguous window is class-stratified.

    Each class's members get evenly spaced positions ``(k + u_c) / n_c`` with a
    random offset ``u_c``; sorting by position interleaves the classes.
    """
    keys, members = [], []
    sub = labels[indices]
    for code in np.unique(sub):
        idx = indices[sub == code]
        idx = idx[rng.permutation(len(idx))]
        keys.append((np.arange(len(idx)) + rng.uniform()) / len(idx))
        members.append(idx)
    if not members:
        return indices[:0]
    keys = np.concatenate(keys)
    members = np.concatenate(members)
    return members[np.argsort(keys, kind="stable")]


def _as_rng(rng_state) -> np.random.Generator:
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def iter_minibatches(meta: MetaTrainSet, part: str, batch: int, rng_state) -> Iterator[np.ndarray]:
    """One epoch of stratified, without-replacement batches of indices into ``meta``."""
    idx = meta.part(part)
    if batch < 1 or batch > len(idx):
        raise ParameterError(f"batch {batch} exceeds partition size {len(idx)}")
    order = stratified_order(meta.labels, idx, _as_rng(rng_state))
    for start in range(0, len(order), batch):
        yield order[start:start + batch]


def sample_minibatch(meta: MetaTrainSet, part: str, batch: int, rng_state) -> list[LabelledSample]:
    chosen = next(iter_minibatches(meta, part, batch, rng_state))
    return [LabelledSample(meta.images[i], int(meta.labels[i]), int(meta.sample_ids[i])) for i in chosen]


# -- persistence -------------------------------------------------------------

def save_corpus(splits: DatasetSplits, directory: str | Path) -> Path:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "eval").mkdir(exist_ok=True)
    code_names = splits.code_names()
    records = []

    def put(sid, img, split, code, name):
        fname = f"images/{sid}.pgm"
        pgm.write_pgm(root / fname, img)
        records.append({"sample_id": sid, "file": fname, "split": split,
                        "label_code": code, "class_name": name})

    for s in splits.artefact_specific:
        put(s.sample_id, s.image, "artefact_specific", s.label, code_names[s.label])
    for s in splits.unseen_labelled:
        put(s.sample_id, s.image, "unseen_labelled", s.label, code_names[s.label])
    for sid, img in zip(splits.unseen_unlabelled.sample_ids, splits.unseen_unlabelled.images):
        put(sid, img, "unseen_unlabelled", None, None)
    with open(root / "manifest.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")

    ids = list(splits.unseen_unlabelled.sample_ids)
    hidden_codes = splits.hidden.reveal(ids)
    hidden_names = splits.hidden.class_names()
    with open(root / "eval" / "hidden.jsonl", "w") as fh:
        for sid, code in zip(ids, hidden_codes):
            fh.write(json.dumps({"sample_id": sid, "hidden_label_code": int(code),
                                 "class_name": hidden_names[sid]}, sort_keys=True) + "\n")
    meta = {"class_codes": splits.class_codes, "prior_classes": list(splits.prior_classes),
            "finetune_classes": list(splits.finetune_classes)}
    (root / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return root


def _read_jsonl(path: Path) -> list[dict]:
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise CorpusIntegrityError(f"missing {path}") from exc


def load_corpus(directory: str | Path) -> DatasetSplits:
    root = Path(directory)
    try:
        meta = json.loads((root / "corpus.json").read_text())
    except FileNotFoundError as exc:
        raise CorpusIntegrityError(f"missing {root / 'corpus.json'}") from exc
    records = _read_jsonl(root / "manifest.jsonl")
    hidden_rows = {r["sample_id"]: r for r in _read_jsonl(root / "eval" / "hidden.jsonl")}

    specific, labelled, pool_imgs, pool_ids = [], [], [], []
    seen = set()
    for r in records:
        sid = r["sample_id"]
        if sid in seen:
            raise CorpusIntegrityError(f"duplicate sample_id {sid} in manifest")
        seen.add(sid)
        path = root / r["file"]
        if not path.is_file():
            raise CorpusIntegrityError(f"manifest references missing file {r['file']}")
        img = pgm.read_pgm(path)
        if r["split"] == "artefact_specific":
            specific.append(LabelledSample(img, int(r["label_code"]), sid))
        elif r["split"] == "unseen_labelled":
            labelled.append(LabelledSample(img, int(r["label_code"]), sid))
        elif r["split"] == "unseen_unlabelled":
            if sid not in hidden_rows:
                raise CorpusIntegrityError(f"no hidden label for test sample {sid}")
            pool_imgs.append(img)
            pool_ids.append(sid)
        else:
            raise CorpusIntegrityError(f"unknown split {r['split']!r} for sample {sid}")
    if set(hidden_rows) != set(pool_ids):
        raise CorpusIntegrityError("eval/hidden.jsonl does not match the unlabelled split")
    shape = (specific or labelled)[0].image.shape if (specific or labelled) else (0, 0)
    pool = UnlabelledPool(np.array(pool_imgs).reshape(-1, *shape), tuple(pool_ids))
    hidden = HiddenLabels({sid: int(hidden_rows[sid]["hidden_label_code"]) for sid in pool_ids},
                          {sid: hidden_rows[sid]["class_name"] for sid in pool_ids})
    return DatasetSplits(specific, labelled, pool, hidden, dict(meta["class_codes"]),
                         tuple(meta["prior_classes"]), tuple(meta["finetune_classes"]))
