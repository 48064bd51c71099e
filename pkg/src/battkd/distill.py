"""Response-based teacher -> student distillation with temperature-softened horizons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seqdata
from .diffcore import DTYPE, Tensor, kl_div, mean, mse, mul, softmax, tensor
from .fitting import fit


@dataclass
class KDConfig:
    temperature: float = 2.0
    alpha: float = 0.3
    epochs: int = 20
    batch: int = 4
    lr: float = 1e-5
    train_stride: int = 1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")


def soften(y_hat, T: float) -> Tensor:
    """softmax(y_hat / T) along the horizon (last) axis."""
    if not T > 0:
        raise ValueError("temperature must be > 0")
    return softmax(mul(tensor(y_hat), 1.0 / T), axis=-1)


def kd_soft_loss(teacher_out, student_out, T: float) -> Tensor:
    """T^2 * KL(softmax(teacher/T) || softmax(student/T)), averaged over the batch."""
    teacher_out, student_out = tensor(teacher_out), tensor(student_out)
    if teacher_out.shape != student_out.shape:
        raise ValueError(f"horizon mismatch: {teacher_out.shape} vs {student_out.shape}")
    kl = kl_div(soften(teacher_out, T), soften(student_out, T), axis=-1)
    return mul(mean(kl), float(T) ** 2)


def kd_total_loss(student_out, teacher_out, y, T: float, alpha: float):
    """Returns (total, soft, hard) with total = alpha*soft + (1-alpha)*hard."""
    soft = kd_soft_loss(teacher_out, student_out, T)
    hard = mse(student_out, y)
    return mul(soft, float(alpha)) + mul(hard, 1.0 - float(alpha)), soft, hard


def teacher_cache(teacher, windows: seqdata.WindowSet, batch: int = 256) -> np.ndarray:
    """Teacher forecasts for every window, computed once in inference mode."""
    teacher.eval()
    outs = [teacher.predict(windows.x[i:i + batch]) for i in range(0, len(windows), batch)]
    if not outs:
        return np.zeros((0, windows.y.shape[1]), DTYPE)
    return np.concatenate(outs).astype(DTYPE)


def distill(teacher, student, windows: seqdata.WindowSet, cfg: KDConfig | None = None, *,
            seed: int = 0, teacher_out: np.ndarray | None = None, strict_protocol: bool = True,
            log_every=None):
    """Train ``student`` on the KD objective; the teacher is only read.

    ``windows`` should come from CCCV cells; with ``strict_protocol`` any other
    protocol is rejected. Returns the per-epoch history (epoch, soft, hard, total).
    """
    cfg = cfg or KDConfig()
    if len(windows) == 0:
        raise ValueError("empty corpus: no distillation windows")
    if strict_protocol and any(p != "CCCV" for p in windows.protocols):
        raise ValueError("distillation corpus contains non-CCCV series")
    if teacher_out is None:
        teacher_out = teacher_cache(teacher, windows)
    student.train()

    def step(idx):
        out = student.forward(windows.x[idx])
        total, soft, hard = kd_total_loss(out, teacher_out[idx], windows.y[idx],
                                          cfg.temperature, cfg.alpha)
        return total, {"soft": soft.data, "hard": hard.data, "total": total.data}

    history = fit(student.parameters(), len(windows), epochs=cfg.epochs, batch=cfg.batch,
                  lr=cfg.lr, seed=seed, step_fn=step, log_every=log_every)
    student.eval()
    student.regime = "distilled"
    return history
