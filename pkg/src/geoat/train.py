"""Feature preparation, the training loop with early stopping, and the seed harness."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .data import ClipRecord, Split, SplitSpec, iterative_stratified_split
from .embfile import read_embedding_file
from .errors import MissingGsc
from .gsc import DEFAULT_DIM, Descriptor, HashedEncoder, ImportedEncoder, encode_descriptors, encode_gsc
from .metrics import EvalReport, evaluate, f1_micro
from .models import FusionModel, ModelConfig
from .signal import MelConfig, load_wav, logmel

log = logging.getLogger(__name__)


@dataclass
class FeatureConfig:
    mel: MelConfig = field(default_factory=MelConfig)
    gsc_dim: int = DEFAULT_DIM
    gsc_encoder: str = "hashed"  # or "imported"
    gsc_embeddings: Optional[str] = None  # EmbeddingFile for the imported encoder
    dedupe: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        if isinstance(d.get("mel"), dict):
            d["mel"] = MelConfig(**d["mel"])
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class FeatureStore:
    """Log-Mel and GSC features for a manifest, computed once and cached in memory."""

    def __init__(self, records: Sequence[ClipRecord], base_dir, cfg: FeatureConfig = FeatureConfig(),
                 poi_source: Optional[Callable] = None):
        self.records = list(records)
        self.index = {r.id: i for i, r in enumerate(self.records)}
        self.base = Path(base_dir)
        self.cfg = cfg
        self.poi_source = poi_source
        self._mel: dict = {}
        self._gsc: dict = {}
        self._tables: dict = {}
        if cfg.gsc_encoder == "imported":
            if not cfg.gsc_embeddings:
                raise ValueError("imported GSC encoder needs gsc_embeddings")
            self.encoder = ImportedEncoder(read_embedding_file(self._path(cfg.gsc_embeddings)))
        else:
            self.encoder = HashedEncoder(cfg.gsc_dim)

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    @property
    def gsc_dim(self) -> int:
        return self.encoder.dim

    def labels(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.records[self.index[i]].labels for i in ids], dtype=np.float64)

    def mel(self, clip_id: str) -> np.ndarray:
        if clip_id not in self._mel:
            rec = self.records[self.index[clip_id]]
            self._mel[clip_id] = logmel(load_wav(self._path(rec.audio_path)), self.cfg.mel).frames.astype(np.float32)
        return self._mel[clip_id]

    def gsc(self, clip_id: str) -> np.ndarray:
        if clip_id in self._gsc:
            return self._gsc[clip_id]
        rec = self.records[self.index[clip_id]]
        if rec.gsc_embedding_ref:
            path, _, key = rec.gsc_embedding_ref.partition("#")
            if path not in self._tables:
                self._tables[path] = read_embedding_file(self._path(path))
            vec = self._tables[path].vector(key or rec.id)
        elif rec.gsc_tags is not None:
            descs = [Descriptor.parse(t) for t in rec.gsc_tags]
            if self.cfg.dedupe:
                descs = list(dict.fromkeys(descs))
            vec = encode_descriptors(descs, self.encoder).values
        elif rec.geo is not None and self.poi_source is not None:
            vec = encode_gsc(self.poi_source(rec.geo), self.encoder, dedupe=self.cfg.dedupe).values
        else:
            raise MissingGsc(f"record {rec.id} has no GSC source")
        self._gsc[clip_id] = np.asarray(vec, dtype=np.float64)
        return self._gsc[clip_id]

    def batch(self, ids: Sequence[str], need_audio: bool, need_gsc: bool, norm=(0.0, 1.0)):
        A = g = None
        if need_audio:
            A = (np.stack([self.mel(i) for i in ids]).astype(np.float64) - norm[0]) / norm[1]
        if need_gsc:
            g = np.stack([self.gsc(i) for i in ids])
        return A, g

    def mel_norm(self, ids: Sequence[str]) -> tuple:
        """Global mean/std of the log-Mel values over ``ids``."""
        total = total_sq = count = 0.0
        for i in ids:
            m = self.mel(i).astype(np.float64)
            total += m.sum()
            total_sq += (m * m).sum()
            count += m.size
        mu = total / count
        sd = float(np.sqrt(max(total_sq / count - mu * mu, 1e-12)))
        return float(mu), sd


@dataclass
class TrainConfig:
    mode: str = "scratch"  # "scratch" (lr 1e-3) or "finetune" (lr 1e-5)
    lr: Optional[float] = None
    weight_decay: float = 0.01
    max_epochs: int = 100
    patience: int = 15
    batch_size: int = 32
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in ("scratch", "finetune"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lr is None:
            self.lr = 1e-3 if self.mode == "scratch" else 1e-5
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("need 0 < patience < max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class EarlyStopping:
    """Track the best validation score; signal a stop after ``patience`` flat epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, score: float) -> bool:
        """Record one epoch's score; returns True when training should stop."""
        self.epoch += 1
        if score > self.best:
            self.best, self.best_epoch = score, self.epoch
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_f1: float


@dataclass
class TrainResult:
    model: FusionModel
    history: list
    best_epoch: int
    best_val_f1: float
    norm: tuple

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_f1"])
            for h in self.history:
                w.writerow([h.epoch, repr(h.loss), repr(h.val_f1)])


def predict(model: FusionModel, store: FeatureStore, ids: Sequence[str], norm=(0.0, 1.0),
            batch_size: int = 64) -> np.ndarray:
    need_audio = model.cfg.variant != "gsc_only"
    out = []
    for s in range(0, len(ids), batch_size):
        A, g = store.batch(ids[s : s + batch_size], need_audio, model.cfg.uses_gsc, norm)
        out.append(model.predict_proba(A, g))
    return np.concatenate(out) if out else np.zeros((0, model.cfg.n_classes))


def _check_gsc(store: FeatureStore, ids: Sequence[str]):
    missing = [i for i in ids if not store.records[store.index[i]].has_gsc]
    if missing:
        raise MissingGsc(f"{len(missing)} record(s) lack GSC, e.g. {missing[:3]}")


def train(store: FeatureStore, split: Split, cfg: TrainConfig, model_cfg: ModelConfig) -> TrainResult:
    """Mini-batch AdamW on BCE; keep the checkpoint with the best validation micro-F1."""
    model_cfg = ModelConfig.from_dict({**model_cfg.to_dict(), "seed": cfg.seed})
    model = FusionModel(model_cfg)
    need_audio = model_cfg.variant != "gsc_only"
    need_gsc = model_cfg.uses_gsc
    if need_gsc:
        _check_gsc(store, list(split.train) + list(split.val))
    norm = store.mel_norm(split.train) if need_audio else (0.0, 1.0)
    params = list(model.params.values())
    opt = ad.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    train_ids = list(split.train)
    y_val = store.labels(split.val)
    stopper = EarlyStopping(cfg.patience)
    best_state = model.state_dict()
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_ids))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            ids = [train_ids[i] for i in order[s : s + cfg.batch_size]]
            A, g = store.batch(ids, need_audio, need_gsc, norm)
            loss = ad.bce_with_logits(model(A, g), store.labels(ids))
            ad.backward(loss, params)
            opt.step()
            losses.append(loss.item() * len(ids))
        mean_loss = float(np.sum(losses) / len(train_ids))
        val_f1 = f1_micro(predict(model, store, split.val, norm), y_val, cfg.threshold).value
        history.append(EpochStats(epoch, mean_loss, val_f1))
        stop = stopper.update(val_f1)
        if stopper.improved:
            best_state = model.state_dict()
        log.debug("epoch %d loss %.5f val_f1 %.4f", epoch, mean_loss, val_f1)
        if stop:
            break
    model.load_state_dict(best_state)
    return TrainResult(model, history, stopper.best_epoch, float(stopper.best), norm)


def checkpoint_config(result: TrainResult, feature_cfg: FeatureConfig, train_cfg: TrainConfig,
                      class_names: Sequence[str]) -> dict:
    return {
        "model": result.model.cfg.to_dict(),
        "features": feature_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "mel_norm": list(result.norm),
        "class_names": list(class_names),
        "best_epoch": result.best_epoch,
    }


def save_trained(result: TrainResult, path, feature_cfg: FeatureConfig, train_cfg: TrainConfig,
                 class_names: Sequence[str]) -> str:
    return save_checkpoint(path, result.model.state_dict(),
                           checkpoint_config(result, feature_cfg, train_cfg, class_names))


def load_trained(path) -> tuple:
    """Return (model, config dict) from a checkpoint written by :func:`save_trained`."""
    params, config = load_checkpoint(path)
    model = FusionModel(ModelConfig.from_dict(config["model"]))
    model.load_state_dict(params)
    return model, config


def evaluate_model(model: FusionModel, store: FeatureStore, ids: Sequence[str], norm,
                   class_names=None, threshold: float = 0.5, seed=None) -> EvalReport:
    probs = predict(model, store, ids, norm)
    return evaluate(probs, store.labels(ids), class_names, threshold, seed=seed, variant=model.cfg.variant)


@dataclass
class SeedRun:
    seed: int
    split: Split
    result: TrainResult
    report: EvalReport


def run_seeds(store: FeatureStore, model_cfg: ModelConfig, train_cfg: TrainConfig,
              seeds: Sequence[int] = (0, 1, 2, 3, 4), split_spec: SplitSpec = SplitSpec(),
              class_names=None, splits: Optional[dict] = None) -> list:
    """Re-split, train and test once per seed (the 5-run protocol)."""
    runs = []
    for seed in seeds:
        split = splits[seed] if splits and seed in splits else iterative_stratified_split(
            store.records, SplitSpec(split_spec.fractions, seed))
        cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": seed})
        res = train(store, split, cfg, model_cfg)
        rep = evaluate_model(res.model, store, split.test, res.norm, class_names, cfg.threshold, seed)
        runs.append(SeedRun(seed, split, res, rep))
    return runs


def summarize(reports: Sequence[EvalReport]) -> dict:
    """mean and (sample) standard deviation of headline metrics across runs."""
    out = {}
    for key in ("map", "micro_auc", "macro_auc", "f1_micro"):
        vals = np.array([getattr(r, key) for r in reports if getattr(r, key) is not None], dtype=np.float64)
        if vals.size:
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0}
    return out
