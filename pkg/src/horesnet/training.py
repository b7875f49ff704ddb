"""SGD with momentum and a step learning-rate schedule, plus the epoch loop."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, batches
from .network import HONetwork
from .schemes import DivergenceError
from .seeding import derive_seed
from .tensor import ContractError, Tensor, no_grad, softmax_cross_entropy


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    h_weight_decay: float = 0.0
    batch_size: int = 128
    milestones: list[int] = field(default_factory=lambda: [100, 150, 200, 230])
    lr_factor: float = 0.1
    epochs: int = 260
    seed: int = 0
    divergence_threshold: float = 10.0
    checkpoint_every: int = 0

    def __post_init__(self):
        self.milestones = [int(m) for m in self.milestones]
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing: {self.milestones}")
        if self.epochs and any(m >= self.epochs for m in self.milestones):
            raise ValueError(f"milestones {self.milestones} must all be < epochs ({self.epochs})")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def schedule(epochs: int, milestones=(100, 150, 200, 230), base_epochs: int = 260) -> list[int]:
    """Rescale the reference milestones to a shorter run."""
    scaled = {max(1, int(round(m * epochs / base_epochs))) for m in milestones}
    return sorted(m for m in scaled if m < epochs)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    seconds: float
    diverged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(config: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < config.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {config.epochs})")
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.lr0 * config.lr_factor ** passed


class SGD:
    """v <- mu*v + (g + wd*p); p <- p - lr*v; grads cleared afterwards."""

    def __init__(self, params: list[Tensor], momentum: float = 0.9, weight_decay: float = 0.0,
                 decay_overrides: dict[int, float] | None = None):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay = [(decay_overrides or {}).get(id(p), weight_decay) for p in self.params]
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        sgd_step(self.params, self.velocity, lr, self.momentum, self.decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params: list[Tensor], velocity: list[np.ndarray], lr: float, momentum: float,
             weight_decay) -> None:
    """In-place update of ``params`` and ``velocity``; clears gradients."""
    decays = weight_decay if isinstance(weight_decay, (list, tuple)) else [weight_decay] * len(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or i} has no gradient")
    for p, v, wd in zip(params, velocity, decays):
        g = p.grad + wd * p.data if wd else p.grad
        v *= momentum
        v += g
        p.data -= lr * v
        p.grad = None


def make_optimizer(net: HONetwork, config: TrainConfig) -> SGD:
    overrides = {id(p): config.h_weight_decay for p in net.step_parameters()}
    for n in net.norm_layers():
        for p in n.parameters():
            overrides[id(p)] = 0.0
    return SGD(net.parameters(), config.momentum, config.weight_decay, overrides)


def evaluate(net: HONetwork, data: Dataset, batch_size: int = 512) -> tuple[float, float]:
    """Mean loss and accuracy in inference mode; non-finite loss -> inf."""
    if len(data) == 0:
        return float("nan"), float("nan")
    net.eval()
    total = correct = 0.0
    try:
        with no_grad(), np.errstate(all="ignore"):
            for xb, yb in batches(data, batch_size, None):
                logits = net(Tensor(xb))
                total += float(softmax_cross_entropy(logits, yb, "sum").data)
                correct += float((logits.data.argmax(axis=1) == yb).sum())
    except DivergenceError:
        net.train()
        return float("inf"), 0.0
    net.train()
    return total / len(data), correct / len(data)


def train(net: HONetwork, data: Dataset, config: TrainConfig, test: Dataset | None = None,
          optimizer: SGD | None = None, start_epoch: int = 0, initial_loss: float | None = None,
          on_epoch: Callable[[EpochRecord, SGD, float], None] | None = None) -> list[EpochRecord]:
    """Run epochs ``start_epoch .. config.epochs - 1``.

    Divergence (epoch train loss non-finite or above ``divergence_threshold``
    times the first batch loss) is recorded in the final record and ends the
    run; it is never raised.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    opt = optimizer or make_optimizer(net, config)
    net.train()
    records: list[EpochRecord] = []
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(config, epoch)
        t0 = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        seen = 0
        diverged = False
        with np.errstate(over="ignore", invalid="ignore"):
            for xb, yb in batches(data, config.batch_size, derive_seed(config.seed, "epoch", epoch)):
                try:
                    logits = net(Tensor(xb))
                    loss = softmax_cross_entropy(logits, yb)
                except DivergenceError:
                    diverged = True
                    break
                value = float(loss.data)
                if not math.isfinite(value):
                    diverged = True
                    break
                if initial_loss is None:
                    initial_loss = value
                loss_sum += value * len(yb)
                correct += int((logits.data.argmax(axis=1) == yb).sum())
                seen += len(yb)
                loss.backward()
                opt.step(lr)
                net.project_step_scales()
        train_loss = loss_sum / seen if seen and not diverged else float("inf")
        train_acc = correct / seen if seen else 0.0
        if not diverged and train_loss > config.divergence_threshold * initial_loss:
            diverged = True
        seconds = time.perf_counter() - t0
        if test is not None and not diverged:
            test_loss, test_acc = evaluate(net, test)
        else:
            test_loss, test_acc = float("nan"), float("nan")
        rec = EpochRecord(epoch, lr, train_loss, train_acc, test_loss, test_acc, seconds, diverged)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec, opt, initial_loss)
        if diverged:
            break
    return records
