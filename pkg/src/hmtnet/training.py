"""Training loop, learning-rate schedule, checkpoints and the ablation driver."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, NumericFault
from .heatmap import DEFAULT_SIGMA, labels_to_heatmaps
from .losses import LossBreakdown, LossWeights, heatmap_loss, regression_loss, total_loss, weight_penalty
from .network import HMTNet, NetworkConfig, ablation_variant, build, variant_name
from .optim import SGD, Adam
from .preprocessing import AugmentRanges, augment, compute_com, crop_normalize, normalize_labels

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "lr", "l_ht_f", "l_r", "l_ht_hmt", "r_w", "total")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 110
    lr0: float = 0.002
    lr_decay: float = 0.96
    weights: LossWeights = LossWeights()
    augment: bool = True
    rotation_range: float = 180.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    translation_range: float = 10.0
    seed: int = 0
    checkpoint_every: int = 10  # epochs; 0 keeps only the final checkpoint
    optimizer: str = "adam"
    heatmap_sigma: float = DEFAULT_SIGMA
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError("lr_decay must lie in (0, 1]")
        if self.lr0 <= 0:
            raise ConfigurationError("lr0 must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    @property
    def augment_ranges(self) -> AugmentRanges:
        return AugmentRanges(self.rotation_range, tuple(self.scale_range), self.translation_range)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for ``epoch``: multiplied by ``lr_decay`` once per epoch."""
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return cfg.lr0 * cfg.lr_decay**epoch


class SampleCache:
    """Per-frame centre of mass and un-augmented patch/labels, computed once."""

    def __init__(self, dataset, size: int):
        self.dataset = dataset
        self.size = size
        self._crops: dict[int, object] = {}
        self._plain: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def crop(self, i: int):
        if i not in self._crops:
            self._crops[i] = compute_com(self.dataset.frame(i))
        return self._crops[i]

    def plain(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if i not in self._plain:
            crop = self.crop(i)
            patch = crop_normalize(self.dataset.frame(i), crop, self.size)
            self._plain[i] = (patch.values, normalize_labels(self.dataset.joints(i), crop))
        return self._plain[i]

    def augmented(self, i: int, rng: np.random.Generator, ranges: AugmentRanges):
        params = ranges.sample(rng)
        values, labels, _ = augment(self.dataset.frame(i), self.crop(i), self.dataset.joints(i), params, self.size)
        return values, labels


def make_batch(cache: SampleCache, indices, J: int, sigma: float, dtype,
               aug_rngs=None, ranges: AugmentRanges | None = None):
    """Stack ``(patches (B,1,s,s), labels (B,3J), heatmaps (B,J,h,h))``."""
    patches, labels = [], []
    for n, i in enumerate(indices):
        if aug_rngs is not None:
            values, lab = cache.augmented(int(i), aug_rngs[n], ranges)
        else:
            values, lab = cache.plain(int(i))
        patches.append(values)
        labels.append(lab)
    labels = np.asarray(labels)
    heatmaps = np.stack([labels_to_heatmaps(lab, J, sigma) for lab in labels])
    return (np.asarray(patches, dtype=dtype)[:, None], labels.astype(dtype), heatmaps.astype(dtype))


def compute_losses(net: HMTNet, x, labels, heatmaps, weights: LossWeights,
                   training: bool = True, rng=None) -> LossBreakdown:
    out = net.forward(x, training=training, rng=rng)
    return total_loss(
        heatmap_loss(out.feature_heatmaps, heatmaps),
        regression_loss(out.joints, labels),
        heatmap_loss(out.hmt_heatmaps, heatmaps),
        weight_penalty(net.parameters()),
        weights,
    )


@dataclass
class TrainResult:
    checkpoint: Path | None
    log_path: Path | None
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def train(net: HMTNet, dataset, cfg: TrainConfig, out_dir=None, log_name: str = "train_log.csv",
          checkpoint_name: str = "final.ckpt") -> TrainResult:
    """Minibatch training with per-epoch learning-rate decay.

    Fully determined by ``cfg.seed``: shuffling, augmentation and dropout
    draw from generators keyed on (seed, epoch, ...). With ``out_dir`` set,
    a CSV log and checkpoints are written there.
    """
    if dataset.topology != net.config.dataset:
        raise ConfigurationError(f"dataset topology {dataset.topology} != network {net.config.dataset}")
    n = len(dataset)
    if n == 0:
        raise ContractError("cannot train on an empty dataset")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    J = net.topology.J
    cache = SampleCache(dataset, net.config.input_size)
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr0) if cfg.optimizer == "adam" else SGD(params, lr=cfg.lr0)
    meta = {"train": _jsonable(cfg.to_dict())}

    history: list[dict] = []
    log_fh = writer = None
    if out is not None:
        log_fh = open(out / log_name, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(LOG_COLUMNS)
    start = time.perf_counter()
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(n)
            for b in range(0, n, cfg.batch_size):
                idx = order[b:b + cfg.batch_size]
                aug_rngs = None
                if cfg.augment:
                    aug_rngs = [np.random.default_rng([cfg.seed, epoch, int(i), 1]) for i in idx]
                x, labels, hms = make_batch(cache, idx, J, cfg.heatmap_sigma, net.dtype,
                                            aug_rngs, cfg.augment_ranges)
                drop_rng = np.random.default_rng([cfg.seed, epoch, step, 2])
                try:
                    parts = compute_losses(net, x, labels, hms, cfg.weights, True, drop_rng)
                    if not np.isfinite(parts.total.data):
                        raise NumericFault(f"total loss is not finite at step {step}")
                except NumericFault:
                    if out is not None:
                        net.save(out / "last_good.ckpt", meta)
                    raise
                opt.zero_grad()
                parts.total.backward()
                opt.step(lr)
                row = {"step": step, "epoch": epoch, "lr": lr, **parts.values()}
                history.append(row)
                if writer is not None:
                    writer.writerow([row[c] for c in LOG_COLUMNS])
                step += 1
            if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                net.save(out / f"epoch{epoch + 1:04d}.ckpt", meta)
            log.debug("epoch %d lr %.3g total %.5g", epoch, lr, history[-1]["total"])
    finally:
        if log_fh is not None:
            log_fh.close()
    ckpt = None
    if out is not None:
        ckpt = out / checkpoint_name
        net.save(ckpt, meta)
    return TrainResult(ckpt, out / log_name if out is not None else None, history, time.perf_counter() - start)


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d


def run_ablation(train_set, test_set, base: NetworkConfig, cfg: TrainConfig, out_dir=None,
                 dtype=np.float32) -> dict[str, dict]:
    """Train and evaluate the four concat x hmt variants from the same seed.

    Returns ``{variant name: {"report": EvalReport, "result": TrainResult}}``;
    each variant writes its own log/checkpoint under ``out_dir/<name>``.
    """
    from .evaluation import evaluate

    results = {}
    for use_concat, use_hmt in ((False, False), (True, False), (False, True), (True, True)):
        config = ablation_variant(use_concat, use_hmt, base)
        name = variant_name(config)
        net = build(config, np.random.default_rng(cfg.seed), dtype)
        sub = None if out_dir is None else Path(out_dir) / name.replace("+", "_")
        result = train(net, train_set, cfg, sub)
        results[name] = {"report": evaluate(net, test_set), "result": result}
        log.info("%s: test mean error %.2f mm", name, results[name]["report"].mean_error_mm)
    return results
