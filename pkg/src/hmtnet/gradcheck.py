"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor, gate_mode


@dataclass
class GradCheckReport:
    worst: float  # largest relative error, kink-crossing probes re-taken on the base piece
    worst_raw: float  # largest relative error of the plain central differences
    coords: int  # coordinates probed
    kink_coords: int  # probes whose +-eps window changed a ReLU mask or pooling argmax


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check_report(
    graph_builder: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with ``(f(x+eps) - f(x-eps)) / (2 eps)``.

    ``graph_builder(*inputs)`` must return a scalar tensor; the inputs are
    perturbed in place, one coordinate at a time.  With ``max_coords`` only a
    random subset of coordinates per input is probed (large networks).

    The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)`` where
    ``floor = 1e-6 * max(1, |f|)`` sits above the round-off noise of the
    difference quotient, so coordinates whose true gradient is below what
    finite differences can resolve do not dominate the result.

    A ReLU or max-pool whose decision flips inside the +-eps window makes the
    difference quotient straddle a kink, where it no longer estimates the
    derivative.  Such probes are detected by recording every switch decision
    and are re-taken, at the same eps, with the base point's decisions
    replayed: the function then stays on the linear piece the analytic
    gradient belongs to.  ``worst_raw`` keeps the plain result.
    """
    for t in inputs:
        t.grad = None
    with gate_mode("record") as base_gates:
        out = graph_builder(*inputs)
    if out.data.size != 1:
        raise ContractError(f"gradient_check needs a scalar output, got shape {out.shape}")
    out.backward()
    f0 = abs(float(out.data))
    floor = 1e-6 * max(1.0, f0)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]
    rng = np.random.default_rng(0) if rng is None else rng

    def evaluate():
        with gate_mode("record") as gates:
            value = float(graph_builder(*inputs).data)
        return value, gates

    def evaluate_frozen():
        with gate_mode("replay", base_gates):
            return float(graph_builder(*inputs).data)

    report = GradCheckReport(0.0, 0.0, 0, 0)
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp, gp = evaluate()
            flat[i] = orig - eps
            fm, gm = evaluate()
            ai = a.reshape(-1)[i]
            numeric = (fp - fm) / (2.0 * eps)
            raw = abs(ai - numeric) / max(abs(ai), abs(numeric), floor)
            err = raw
            if not (_same(gp, base_gates) and _same(gm, base_gates)):
                report.kink_coords += 1
                flat[i] = orig + eps
                fp = evaluate_frozen()
                flat[i] = orig - eps
                fm = evaluate_frozen()
                numeric = (fp - fm) / (2.0 * eps)
                err = abs(ai - numeric) / max(abs(ai), abs(numeric), floor)
            flat[i] = orig
            report.coords += 1
            report.worst = max(report.worst, err)
            report.worst_raw = max(report.worst_raw, raw)
    return report


def gradient_check(
    graph_builder: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative discrepancy between analytic and numeric gradients.

    See :func:`gradient_check_report` for the error measure and the handling
    of probes that straddle a ReLU or pooling kink.
    """
    return gradient_check_report(graph_builder, inputs, eps, max_coords, rng).worst
