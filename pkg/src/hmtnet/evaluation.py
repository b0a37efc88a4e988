"""Mean 3D joint error, success-rate curves and inference throughput."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .network import HMTNet
from .preprocessing import compute_com, crop_normalize, denormalize_prediction
from .tensor import no_grad

REFERENCE_FPS = 220.7
DEFAULT_THRESHOLDS = np.arange(0.0, 81.0, 1.0)


@dataclass
class EvalReport:
    mean_error_mm: float
    per_joint_error_mm: np.ndarray
    thresholds_mm: np.ndarray
    success_fraction: np.ndarray  # frames whose worst joint is within the threshold
    per_joint_success: np.ndarray  # (J, T): fraction of frames with that joint within threshold
    frame_count: int

    def success_at(self, threshold: float) -> float:
        i = int(np.searchsorted(self.thresholds_mm, threshold))
        if i >= len(self.thresholds_mm) or self.thresholds_mm[i] != threshold:
            raise ContractError(f"threshold {threshold} is not on the report grid")
        return float(self.success_fraction[i])

    def write_success_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_mm", "success_fraction"])
            for t, s in zip(self.thresholds_mm, self.success_fraction):
                w.writerow([f"{t:g}", repr(float(s))])

    def write_per_joint_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_mm", *[f"joint_{j}" for j in range(len(self.per_joint_error_mm))]])
            for k, t in enumerate(self.thresholds_mm):
                w.writerow([f"{t:g}", *[repr(float(v)) for v in self.per_joint_success[:, k]]])


def joint_errors(pred_mm, gt_mm) -> np.ndarray:
    """Euclidean error per frame and joint, ``(N, J)``."""
    pred_mm = np.asarray(pred_mm, dtype=np.float64)
    gt_mm = np.asarray(gt_mm, dtype=np.float64)
    if pred_mm.shape != gt_mm.shape or pred_mm.ndim != 3 or pred_mm.shape[-1] != 3:
        raise ContractError(f"predictions {pred_mm.shape} and ground truth {gt_mm.shape} must both be (N, J, 3)")
    return np.linalg.norm(pred_mm - gt_mm, axis=-1)


def report_from_errors(errors: np.ndarray, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2 or errors.shape[0] == 0:
        raise ContractError("need a non-empty (N, J) error table")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    worst = errors.max(axis=1)
    success = (worst[:, None] <= thresholds[None, :]).mean(axis=0)
    per_joint = (errors[:, :, None] <= thresholds[None, None, :]).mean(axis=0)
    return EvalReport(
        mean_error_mm=float(errors.mean()),
        per_joint_error_mm=errors.mean(axis=0),
        thresholds_mm=thresholds,
        success_fraction=success,
        per_joint_success=per_joint,
        frame_count=errors.shape[0],
    )


def evaluate_predictions(pred_mm, gt_mm, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    return report_from_errors(joint_errors(pred_mm, gt_mm), thresholds)


def predict(net: HMTNet, dataset, batch_size: int = 32) -> np.ndarray:
    """Eval-mode predictions in world mm, ``(N, J, 3)``; the crop comes from each frame's COM."""
    J = net.topology.J
    preds = []
    with no_grad():
        for b in range(0, len(dataset), batch_size):
            idx = range(b, min(b + batch_size, len(dataset)))
            crops, patches = [], []
            for i in idx:
                frame = dataset.frame(i)
                crop = compute_com(frame)
                crops.append(crop)
                patches.append(crop_normalize(frame, crop, net.config.input_size).values)
            x = np.asarray(patches, dtype=net.dtype)[:, None]
            out = net.forward(x, training=False).joints.data
            preds.extend(denormalize_prediction(v, c, J) for v, c in zip(out, crops))
    return np.asarray(preds).reshape(-1, J, 3)


def evaluate(net: HMTNet, test_set, thresholds=DEFAULT_THRESHOLDS, batch_size: int = 32) -> EvalReport:
    if len(test_set) == 0:
        raise ContractError("cannot evaluate on an empty test set")
    pred = predict(net, test_set, batch_size)
    return evaluate_predictions(pred, test_set.labels[[s.label for s in test_set.samples]], thresholds)


@dataclass
class BenchReport:
    frame_latency_s: list[float] = field(default_factory=list)
    batch_size: int = 1
    reference_fps: float = REFERENCE_FPS

    @property
    def n_frames(self) -> int:
        return len(self.frame_latency_s)

    @property
    def mean_fps(self) -> float:
        return self.n_frames / sum(self.frame_latency_s)

    @property
    def median_fps(self) -> float:
        return 1.0 / statistics.median(self.frame_latency_s)

    def summary(self) -> str:
        return (f"{self.n_frames} frames, batch {self.batch_size}: mean {self.mean_fps:.1f} fps, "
                f"median {self.median_fps:.1f} fps (reference GPU figure for context: "
                f"{self.reference_fps} fps)")


def bench_inference(net: HMTNet, n_frames: int = 1000, batch_size: int = 1, warmup: int = 3,
                    seed: int = 0) -> BenchReport:
    """Steady-state eval-mode forward latency on random patches; nothing is asserted."""
    if n_frames < 100:
        raise ContractError("benchmark needs at least 100 frames")
    rng = np.random.default_rng(seed)
    s = net.config.input_size
    make = lambda b: rng.uniform(-1.0, 1.0, (b, 1, s, s)).astype(net.dtype)
    report = BenchReport(batch_size=batch_size)
    with no_grad():
        for _ in range(warmup):
            net.forward(make(batch_size), training=False)
        remaining = n_frames
        while remaining > 0:
            b = min(batch_size, remaining)
            x = make(b)
            t0 = time.perf_counter()
            net.forward(x, training=False)
            dt = time.perf_counter() - t0
            report.frame_latency_s.extend([dt / b] * b)
            remaining -= b
    return report
