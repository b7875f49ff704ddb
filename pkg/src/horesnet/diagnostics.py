"""Measurement battery: untrained loss ranges, learning-rate robustness,
degradation with depth, time-to-threshold and memory/time accounting."""

from __future__ import annotations

import gc
import math
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Dataset
from .network import NetworkShape, build, param_count
from .schemes import DivergenceError, get_tableau, op_counts, peak_live_states, retained_shortcuts
from .seeding import derive_seed
from .tensor import Tensor, no_grad, softmax_cross_entropy, topological_order
from .training import TrainConfig, schedule, train

SCHEME_ORDER = ("euler", "midpoint", "rk4", "verner")


def probe_batch(data: Dataset, size: int = 128, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Fixed ``size`` samples drawn (without replacement) by ``seed``."""
    rng = np.random.default_rng(derive_seed(seed, "probe", 0))
    idx = np.sort(rng.permutation(len(data))[:size])
    return data.features[idx], data.labels[idx]


# -- untrained loss ranges ---------------------------------------------------

@dataclass
class InitProbeResult:
    scheme: str
    depth: int
    seeds: list[int]
    losses: list[float]               # mean probe loss per seed
    sample_spreads: list[float]       # max - min per-sample loss per seed
    min: float
    max: float
    spread: float
    median_log_spread: float          # median over seeds of log10(sample spread)

    def to_dict(self) -> dict:
        return asdict(self)


def _log10(v: float) -> float:
    if v == 0:
        return float("-inf")
    return math.log10(v)


def init_probe(shape: NetworkShape, seeds, probe: tuple[np.ndarray, np.ndarray],
               mode: str = "eval") -> InitProbeResult:
    """Per-seed loss of an untrained network on ``probe``.

    ``mode='eval'`` evaluates with the freshly initialised running statistics,
    ``'train'`` with batch statistics.  Non-finite losses are recorded as inf.
    """
    seeds = list(seeds)
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    xb, yb = probe
    losses, spreads = [], []
    for s in seeds:
        net = build(shape, s)
        net.train(mode == "train")
        with no_grad(), np.errstate(all="ignore"):
            try:
                per = softmax_cross_entropy(net(Tensor(xb)), yb, "none").data
            except DivergenceError:
                per = np.array([np.inf])
        if not np.all(np.isfinite(per)):
            losses.append(float("inf"))
            spreads.append(float("inf"))
        else:
            losses.append(float(per.mean()))
            spreads.append(float(per.max() - per.min()))
    lo, hi = min(losses), max(losses)
    spread = hi - lo if math.isfinite(hi) else float("inf")
    med = statistics.median(_log10(v) for v in spreads)
    return InitProbeResult(shape.scheme, shape.depth, seeds, losses, spreads, lo, hi, spread, med)


# -- learning-rate robustness --------------------------------------------------

@dataclass
class LRSweepResult:
    scheme: str
    depth: int
    lrs: list[float]
    diverged: list[bool]
    final_train_loss: list[float]
    final_train_acc: list[float]
    max_stable_lr: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def max_stable(lrs: list[float], diverged: list[bool]) -> float | None:
    """Largest grid lr with every lr up to it converged."""
    best = None
    for lr, d in zip(lrs, diverged):
        if d:
            break
        best = lr
    return best


def lr_sweep(shape: NetworkShape, lr_grid, short_epochs: int, task: tuple[Dataset, Dataset | None],
             base: TrainConfig | None = None, seed: int = 0) -> LRSweepResult:
    lrs = [float(v) for v in lr_grid]
    if len(lrs) < 3:
        raise ValueError("learning-rate grid needs at least 3 points")
    if any(b <= a for a, b in zip(lrs, lrs[1:])):
        raise ValueError("learning-rate grid must be strictly increasing")
    base = base or TrainConfig()
    train_set, _ = task
    diverged, losses, accs = [], [], []
    for lr in lrs:
        cfg = replace(base, lr0=lr, epochs=short_epochs, milestones=schedule(short_epochs), seed=seed)
        net = build(shape, seed)
        recs = train(net, train_set, cfg)
        last = recs[-1] if recs else None
        diverged.append(bool(last and last.diverged))
        losses.append(last.train_loss if last else float("nan"))
        accs.append(last.train_acc if last else float("nan"))
    return LRSweepResult(shape.scheme, shape.depth, lrs, diverged, losses, accs, max_stable(lrs, diverged))


# -- degradation with depth ----------------------------------------------------

@dataclass
class DegradationResult:
    scheme: str
    depths: list[int]
    accuracy: list[float]            # mean final test accuracy over seeds
    per_seed: list[list[float]]
    diverged: list[int]              # diverged runs per depth
    peak_depth: int
    first_drop_depth: float          # inf when accuracy never drops

    def to_dict(self) -> dict:
        return asdict(self)


def first_drop(depths: list[int], acc: list[float]) -> float:
    for i in range(1, len(depths)):
        if acc[i] < acc[i - 1]:
            return float(depths[i])
    return float("inf")


def degradation_sweep(scheme: str, depth_list, task: tuple[Dataset, Dataset], config: TrainConfig,
                      template: NetworkShape | None = None, seeds=(0,)) -> DegradationResult:
    train_set, test_set = task
    template = template or NetworkShape(depth=10, scheme=scheme)
    depths = [int(d) for d in depth_list]
    accs, per_seed, divs = [], [], []
    for d in depths:
        shape = replace(template, depth=d, scheme=scheme)
        _ = shape.block_count
        row, nd = [], 0
        for s in seeds:
            net = build(shape, s)
            recs = train(net, train_set, replace(config, seed=s), test_set)
            if not recs:
                row.append(float("nan"))
                continue
            last = recs[-1]
            if last.diverged:
                nd += 1
                good = [r.test_acc for r in recs if not r.diverged]
                row.append(good[-1] if good else 0.0)
            else:
                row.append(last.test_acc)
        accs.append(float(np.mean(row)))
        per_seed.append(row)
        divs.append(nd)
    peak = depths[int(np.argmax(accs))]
    return DegradationResult(scheme, depths, accs, per_seed, divs, peak, first_drop(depths, accs))


# -- time to threshold -----------------------------------------------------------

@dataclass
class ThresholdResult:
    scheme: str
    depth: int
    threshold: float
    epochs: float          # epochs needed (1-based); inf if never reached
    seconds: float
    per_seed: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def time_to_threshold(shape: NetworkShape, task: tuple[Dataset, Dataset | None], config: TrainConfig,
                      threshold: float = 0.95, seeds=(0,)) -> ThresholdResult:
    """Epochs until running train accuracy first reaches ``threshold`` (median over seeds)."""
    train_set, _ = task
    epochs, secs = [], []
    for s in seeds:
        net = build(shape, s)
        recs = train(net, train_set, replace(config, seed=s))
        hit = next((i for i, r in enumerate(recs) if not r.diverged and r.train_acc >= threshold), None)
        epochs.append(float("inf") if hit is None else float(hit + 1))
        secs.append(sum(r.seconds for r in recs[:(hit + 1) if hit is not None else len(recs)]))
    return ThresholdResult(shape.scheme, shape.depth, threshold, float(np.median(epochs)),
                           float(np.median(secs)), epochs)


# -- cost accounting -------------------------------------------------------------

@dataclass
class CostAccount:
    scheme: str
    depth: int
    blocks: int
    retained_shortcuts: int          # per block
    peak_live_states: int            # per block
    extra_multiplies: int            # per block
    extra_adds: int                  # per block
    parameters: int
    tape_bytes: int                  # arrays held for backward after one training forward
    peak_forward_bytes: int          # tracemalloc peak of an inference forward
    epoch_seconds: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def tape_bytes(loss: Tensor) -> int:
    return int(sum(n.data.nbytes for n in topological_order(loss)))


def cost_account(shape: NetworkShape, sample: tuple[np.ndarray, np.ndarray], seed: int = 0,
                 epoch_seconds: float | None = None) -> CostAccount:
    tab = get_tableau(shape.scheme)
    ops = op_counts(tab)
    net = build(shape, seed)
    xb, yb = sample
    loss = softmax_cross_entropy(net(Tensor(xb)), yb)
    tb = tape_bytes(loss)
    del loss
    net.eval()
    tracemalloc.start()
    with no_grad():
        net(Tensor(xb))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return CostAccount(shape.scheme, shape.depth, shape.block_count, retained_shortcuts(tab),
                       peak_live_states(tab), ops["extra_multiplies"], ops["extra_adds"],
                       param_count(net)[0], tb, int(peak), epoch_seconds)


def epoch_times(shapes: list[NetworkShape], data: Dataset, config: TrainConfig, rounds: int = 40,
                seed: int = 0, clock=time.perf_counter) -> dict[str, float]:
    """Seconds per epoch estimated as best-of-``rounds`` single-batch steps.

    Each round times one optimizer step (forward, backward, update) per
    scheme, in an order rotated every round; the minimum over rounds filters
    out scheduler noise, then it is scaled by the number of batches in an
    epoch.  The learning
    rate is pinned to 1e-3 so no cell stops early on divergence.  The
    collector is paused while timing, as ``timeit`` does.
    """
    bs = min(config.batch_size, len(data))
    batch = data.subset(np.arange(bs))
    cfg = replace(config, lr0=1e-3, epochs=1, milestones=[], seed=seed)
    nets = {s.scheme: build(s, seed) for s in shapes}
    best = {s.scheme: float("inf") for s in shapes}
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for r in range(rounds):
            # rotate so no scheme always runs first after a collection
            for s in shapes[r % len(shapes):] + shapes[:r % len(shapes)]:
                t0 = clock()
                train(nets[s.scheme], batch, cfg)
                best[s.scheme] = min(best[s.scheme], clock() - t0)
            gc.collect()
    finally:
        if was_enabled:
            gc.enable()
    n_batches = math.ceil(len(data) / bs)
    return {k: v * n_batches for k, v in best.items()}


# -- gradient integrity ------------------------------------------------------------

@dataclass
class GradientAudit:
    scheme: str
    depth: int
    parameters: int
    max_rel_error: float
    worst: str

    def to_dict(self) -> dict:
        return asdict(self)


def gradient_audit(net, xb: np.ndarray, yb: np.ndarray, eps: float = 1e-5,
                   floor: float = 1e-6) -> GradientAudit:
    """Central-difference check of every trainable scalar against backprop.

    Relative error is |a - n| / max(|a|, |n|, floor).  Norm layers run with
    batch statistics but their running estimates are restored afterwards.
    """
    buffers = [(n, n.running_mean.copy(), n.running_var.copy()) for n in net.norm_layers()]

    def loss_value() -> float:
        with no_grad():
            return float(softmax_cross_entropy(net(Tensor(xb)), yb).data)

    net.train()
    for p in net.parameters():
        p.grad = None
    softmax_cross_entropy(net(Tensor(xb)), yb).backward()
    worst, worst_name, count = 0.0, "", 0
    for name, p in net.named_parameters():
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_value()
            flat[i] = old - eps
            down = loss_value()
            flat[i] = old
            num = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
            count += 1
        p.grad = None
    for n, m, v in buffers:
        n.running_mean[...] = m
        n.running_var[...] = v
    return GradientAudit(net.shape.scheme, net.shape.depth, count, worst, worst_name)
