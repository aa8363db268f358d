"""Cross-entropy training with the co-occurrence Laplacian penalty, via Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as tc
from .graph import GraphLaplacian, laplacian
from .model import ModelConfig, init_params, model_forward, param_shapes
from .tensor import Tensor

logger = logging.getLogger(__name__)

Y_CLAMP = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 1.0e-5
    epochs: int = 150
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    glr_enabled: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


@dataclass(frozen=True)
class LossBreakdown:
    bce: float
    glr: float
    total: float


@dataclass
class Example:
    """One training clip: log mel features (D, T) and its event roll (M, T)."""

    name: str
    features: np.ndarray
    roll: np.ndarray


def bce_loss(y: Tensor, z) -> Tensor:
    """Summed sigmoid cross-entropy; logs see y clamped to [1e-7, 1 - 1e-7]."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError(f"activation shape {y.shape} does not match target shape {z.shape}")
    yc = tc.clip(y, Y_CLAMP, 1.0 - Y_CLAMP)
    ll = tc.log(yc) * Tensor(z) + tc.log(1.0 - yc) * Tensor(1.0 - z)
    return -ll.sum()


def glr_term(y: Tensor, lap: GraphLaplacian | np.ndarray) -> Tensor:
    """Sum over clips of s^T L s with s = sum_t y_t; y is (M, T) or (B, M, T)."""
    L = lap.laplacian if isinstance(lap, GraphLaplacian) else np.asarray(lap)
    if y.shape[-2] != L.shape[0]:
        raise ValueError(f"{y.shape[-2]} events do not match a graph of size {L.shape[0]}")
    s = y.sum(axis=-1)
    return (s * (s @ Tensor(L))).sum()


def total_loss(y: Tensor, z, lap: GraphLaplacian | np.ndarray | None, alpha: float,
               glr_enabled: bool = True) -> tuple[Tensor, LossBreakdown]:
    """Objective tensor and its logged breakdown.

    The penalty joins the differentiated objective only when it is enabled
    and ``alpha > 0``; otherwise it is still reported (if a graph is given)
    but computed off the tape.
    """
    bce = bce_loss(y, z)
    if lap is None:
        if glr_enabled and alpha > 0:
            raise ValueError("a graph Laplacian is required when the penalty is enabled")
        return bce, LossBreakdown(bce.item(), 0.0, bce.item())
    if glr_enabled and alpha > 0:
        glr = glr_term(y, lap)
        total = bce + glr * alpha
        return total, LossBreakdown(bce.item(), glr.item(), total.item())
    glr = glr_term(y.detach(), lap).item()
    return bce, LossBreakdown(bce.item(), glr, bce.item())


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> AdamState:
    """In-place bias-corrected Adam update of ``params``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return state


@dataclass(frozen=True)
class LogRow:
    epoch: int
    batch: int
    bce: float
    glr: float
    total: float


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    log: list[LogRow]

    def epoch_means(self) -> list[LossBreakdown]:
        return [_mean_breakdown([r for r in self.log if r.epoch == e])
                for e in sorted({r.epoch for r in self.log})]


def _mean_breakdown(rows: Sequence[LogRow]) -> LossBreakdown:
    return LossBreakdown(*(float(np.mean([getattr(r, k) for r in rows])) for k in ("bce", "glr", "total")))


def _batch_forward(batch: Sequence[Example], params, model_cfg: ModelConfig):
    """Forward a batch; clips of unequal length are run one at a time."""
    if len({ex.features.shape for ex in batch}) == 1:
        V = np.stack([ex.features for ex in batch])
        z = np.stack([ex.roll for ex in batch])
        return [(model_forward(V, params, model_cfg), z)]
    return [(model_forward(ex.features, params, model_cfg), ex.roll) for ex in batch]


def train(dataset: Sequence[Example], lap: GraphLaplacian | None, model_cfg: ModelConfig,
          cfg: TrainConfig, params: dict[str, Tensor] | None = None,
          on_epoch: Callable[[int, LossBreakdown], None] | None = None) -> TrainResult:
    if not dataset:
        raise ValueError("training set is empty")
    if cfg.glr_enabled and cfg.alpha > 0 and lap is None:
        raise ValueError("a graph is required when the penalty is enabled")
    if lap is not None and lap.size != model_cfg.num_events:
        raise ValueError(f"graph has {lap.size} events, model has {model_cfg.num_events}")
    for ex in dataset:
        if ex.roll.shape != (model_cfg.num_events, ex.features.shape[1]):
            raise ValueError(f"{ex.name}: roll shape {ex.roll.shape} does not match features {ex.features.shape}")

    params = init_params(model_cfg, cfg.seed) if params is None else params
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    log: list[LogRow] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            for p in params.values():
                p.grad = None
            objective = None
            bce_sum = glr_sum = 0.0
            for y, z in _batch_forward(batch, params, model_cfg):
                loss, br = total_loss(y, z, lap, cfg.alpha, cfg.glr_enabled)
                objective = loss if objective is None else objective + loss
                bce_sum += br.bce
                glr_sum += br.glr
            tc.backward(objective)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adam_step(params, grads, state, cfg)
            weight = cfg.alpha if cfg.glr_enabled else 0.0
            log.append(LogRow(epoch, bi, bce_sum, glr_sum, bce_sum + weight * glr_sum))
        if on_epoch is not None:
            on_epoch(epoch, _mean_breakdown([r for r in log if r.epoch == epoch]))
    return TrainResult(params, log)


def write_loss_log(path, log: Sequence[LogRow]) -> None:
    lines = ["epoch,batch,bce,glr,total"]
    lines += [f"{r.epoch},{r.batch},{r.bce!r},{r.glr!r},{r.total!r}" for r in log]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_loss_log(path) -> list[LogRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["epoch", "batch", "bce", "glr", "total"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in fh:
            e, b, bce, glr, total = line.strip().split(",")
            rows.append(LogRow(int(e), int(b), float(bce), float(glr), float(total)))
    return rows


TOY_MODEL = ModelConfig(input_bands=9, conv_channels=(2, 2, 2), pool_sizes=(3, 3, 1), gru_units=3, num_events=3)


def toy_gradcheck(alphas: Sequence[float] = (0.0, 1e-5, 1e-2), frames: int = 5, seed: int = 0,
                  step: float = 1e-5, model_cfg: ModelConfig = TOY_MODEL) -> list[tuple[float, str, float]]:
    """Finite-difference check of every parameter gradient of the full objective.

    Returns ``(alpha, parameter, max relative error)`` rows.
    """
    rng = np.random.default_rng(seed)
    m = model_cfg.num_events
    V = rng.normal(size=(model_cfg.input_bands, frames))
    z = (rng.random((m, frames)) < 0.4).astype(np.float64)
    A = rng.random((m, m))
    A = np.triu(A, 1) + np.triu(A, 1).T
    lap = laplacian(A)
    # nonzero biases so every bias path is exercised; conv biases positive to keep ReLUs live
    biases = {name: rng.uniform(0.05, 0.5, size=shape) if name.startswith("conv")
              else rng.uniform(-0.5, 0.5, size=shape)
              for name, shape in param_shapes(model_cfg).items() if len(shape) == 1}
    rows = []
    for alpha in alphas:
        params = init_params(model_cfg, seed)
        for name, b in biases.items():
            params[name].data = b.copy()

        def objective():
            loss, _ = total_loss(model_forward(V, params, model_cfg), z, lap, alpha)
            return loss

        for name, err in tc.grad_check(objective, params, step).items():
            rows.append((alpha, name, err))
    return rows
