"""HO-ResNet assembly: embedding, a homogeneous stack of scheme blocks, head."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .schemes import Block, DivergenceError, StepScale, get_tableau
from .seeding import derive_seed
from .subnet import Dense2, NormLayer, StageFunction, make_stage
from .tensor import DimensionError, Tensor, conv2d_3x3, linear, parameter, tmean


class ConfigError(ValueError):
    pass


@dataclass
class NetworkShape:
    """Depth counts every weight layer: embedding + 2 per stage function + head."""

    depth: int
    scheme: str = "euler"
    width: int = 16
    in_features: int = 2
    classes: int = 2
    stage: str = "dense2"          # dense2 | conv2 | zero | identity
    activation: str = "relu"
    image_size: int | None = None  # set for conv inputs (c = in_features)
    h_per_stage: bool = False
    h_clamp: tuple[float, float] | None = None
    h_init: float = 1.0

    @property
    def layers_per_block(self) -> int:
        return get_tableau(self.scheme).layers_per_block

    @property
    def block_count(self) -> int:
        lpb = self.layers_per_block
        if self.depth < 2 + lpb or (self.depth - 2) % lpb:
            raise ConfigError(invalid_depth_message(self.scheme, self.depth))
        return (self.depth - 2) // lpb

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkShape":
        d = dict(d)
        if d.get("h_clamp") is not None:
            d["h_clamp"] = tuple(d["h_clamp"])
        return cls(**d)


def valid_depths(scheme: str, near: int, count: int = 2) -> list[int]:
    lpb = get_tableau(scheme).layers_per_block
    below = [2 + lpb * n for n in range(max(1, (near - 2) // lpb - count + 1), (near - 2) // lpb + 1) if n >= 1]
    above = [2 + lpb * n for n in range(max(1, (near - 2) // lpb + 1), (near - 2) // lpb + 1 + count)]
    return sorted(set(d for d in below + above if d != near))


def invalid_depth_message(scheme: str, depth: int) -> str:
    lpb = get_tableau(scheme).layers_per_block
    return (f"depth {depth} is not valid for {scheme} ({lpb} layers per block, depth = 2 + {lpb}*blocks); "
            f"nearby valid depths: {valid_depths(scheme, depth)}")


def equivalent_depth(scheme: str, target: int) -> int:
    """Largest valid depth for ``scheme`` not exceeding ``target`` (at least one block)."""
    lpb = get_tableau(scheme).layers_per_block
    return 2 + lpb * max(1, (target - 2) // lpb)


class Embedding:
    def __init__(self, shape: NetworkShape, rng: np.random.Generator):
        self.image = shape.image_size is not None
        c_in, c = shape.in_features, shape.width
        if self.image:
            self.w = parameter(rng.standard_normal((c, c_in, 3, 3)) * np.sqrt(2.0 / (9 * c_in)), name="embed.w")
        else:
            self.w = parameter(rng.standard_normal((c_in, c)) * np.sqrt(2.0 / c_in), name="embed.w")
        self.b = parameter(np.zeros(c), name="embed.b")

    def __call__(self, x: Tensor) -> Tensor:
        if self.image:
            return conv2d_3x3(x, self.w, self.b)
        return linear(x, self.w, self.b)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class Head:
    def __init__(self, shape: NetworkShape, rng: np.random.Generator):
        self.image = shape.image_size is not None
        c = shape.width
        self.w = parameter(rng.standard_normal((c, shape.classes)) * np.sqrt(1.0 / c), name="head.w")
        self.b = parameter(np.zeros(shape.classes), name="head.b")

    def __call__(self, x: Tensor) -> Tensor:
        if self.image:
            x = tmean(x, axis=(2, 3))
        return linear(x, self.w, self.b)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class HONetwork:
    def __init__(self, shape: NetworkShape, embedding: Embedding, blocks: list[Block], head: Head, seed: int):
        self.shape = shape
        self.embedding = embedding
        self.blocks = blocks
        self.head = head
        self.seed = seed

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        expect = ((self.shape.in_features, self.shape.image_size, self.shape.image_size)
                  if self.shape.image_size else (self.shape.in_features,))
        if x.shape[1:] != expect:
            raise DimensionError(f"network expects input (n, {', '.join(map(str, expect))}), got {x.shape}")
        h = self.embedding(x)
        for i, block in enumerate(self.blocks):
            try:
                h = block(h)
            except DivergenceError as exc:
                raise DivergenceError(f"block {i}: {exc}", stage=exc.stage, block=i) from exc
        logits = self.head(h)
        if not np.isfinite(logits.data).all():
            raise DivergenceError("non-finite logits", block=len(self.blocks))
        return logits

    def parameters(self) -> list[Tensor]:
        params = list(self.embedding.parameters())
        for b in self.blocks:
            params.extend(b.parameters())
        params.extend(self.head.parameters())
        return params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"embedding.{i}", p) for i, p in enumerate(self.embedding.parameters())]
        for bi, b in enumerate(self.blocks):
            for si, f in enumerate(b.stages):
                out.extend((f"blocks.{bi}.stage{si + 1}.{p.name or i}", p) for i, p in enumerate(f.parameters()))
            out.extend((f"blocks.{bi}.h{i}", p) for i, p in enumerate(b.step.parameters()))
        out.extend((f"head.{i}", p) for i, p in enumerate(self.head.parameters()))
        return out

    def step_parameters(self) -> list[Tensor]:
        return [p for b in self.blocks for p in b.step.parameters()]

    def norm_layers(self) -> list[NormLayer]:
        return [n for b in self.blocks for f in b.stages for n in f.norm_layers()]

    def stage_functions(self) -> list[StageFunction]:
        return [f for b in self.blocks for f in b.stages]

    def train(self, mode: bool = True) -> None:
        for b in self.blocks:
            b.train(mode)

    def eval(self) -> None:
        self.train(False)

    def project_step_scales(self) -> None:
        for b in self.blocks:
            b.step.project()

    @property
    def layer_count(self) -> int:
        return 2 + sum(b.tableau.layers_per_block for b in self.blocks)


def build(shape: NetworkShape, seed: int) -> HONetwork:
    """Deterministic network for ``(shape, seed)``."""
    tab = get_tableau(shape.scheme)
    n_blocks = shape.block_count
    rng = np.random.default_rng(derive_seed(seed, "network", 0))
    embedding = Embedding(shape, rng)
    blocks = []
    for bi in range(n_blocks):
        stages = [make_stage(shape.stage, shape.width, rng, shape.activation) for _ in range(tab.s)]
        learnable = tab.h_policy == "learnable"
        step = StepScale(value=shape.h_init if tab.h_policy != "none" else 1.0, learnable=learnable,
                         clamp=shape.h_clamp, per_stage=tab.s if (learnable and shape.h_per_stage) else 0)
        blocks.append(Block(tab, stages, step))
    head = Head(shape, rng)
    return HONetwork(shape, embedding, blocks, head, seed)


def param_count(net: HONetwork) -> tuple[int, int]:
    """``(trainable, extra_h)``; trainable includes the learnable step scales."""
    trainable = sum(p.size for p in net.parameters())
    extra_h = sum(p.size for p in net.step_parameters())
    return trainable, extra_h


def dense2_param_count(features: int, width: int) -> int:
    return features * width + width + width * features + features


# -- checkpoints -------------------------------------------------------------

MAGIC = b"HORNCKPT"
CHECKPOINT_VERSION = 1


def _state_arrays(net: HONetwork) -> list[tuple[str, np.ndarray]]:
    arrays = [(name, p.data) for name, p in net.named_parameters()]
    for i, n in enumerate(net.norm_layers()):
        arrays.append((f"norm.{i}.running_mean", n.running_mean))
        arrays.append((f"norm.{i}.running_var", n.running_var))
    # fixed (non-learnable) step scales are state too
    for bi, b in enumerate(net.blocks):
        if not b.step.learnable:
            arrays.extend((f"blocks.{bi}.hfixed{i}", p.data) for i, p in enumerate(b.step.params))
    return arrays


def save_checkpoint(net: HONetwork, path: str | Path, extra: dict | None = None,
                    extra_arrays: list[tuple[str, np.ndarray]] | None = None) -> Path:
    """Binary container + JSON sidecar.

    Layout: magic, u32 version, u32 header length, JSON header, float64
    little-endian buffers in header order, 32-byte sha256 of everything
    preceding it.
    """
    path = Path(path)
    arrays = _state_arrays(net) + list(extra_arrays or [])
    header = {
        "version": CHECKPOINT_VERSION,
        "shape": net.shape.to_dict(),
        "seed": net.seed,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = bytearray(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes)
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    digest = hashlib.sha256(body).digest()
    path.write_bytes(bytes(body) + digest)
    sidecar = {k: v for k, v in header.items() if k != "tensors"}
    sidecar["sha256"] = digest.hex()
    sidecar["parameters"] = param_count(net)[0]
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


class CheckpointError(ValueError):
    pass


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = len(MAGIC) + 8
    header = json.loads(body[off:off + hlen])
    off += hlen
    arrays = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arrays[t["name"]] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(t["shape"]).copy()
        off += 8 * n
    return header, arrays


def load_checkpoint(path: str | Path) -> tuple[HONetwork, dict, dict[str, np.ndarray]]:
    """Rebuild the network; returns ``(net, extra, leftover_arrays)``."""
    header, arrays = read_checkpoint(path)
    net = build(NetworkShape.from_dict(header["shape"]), header["seed"])
    for name, a in _state_arrays(net):
        if name not in arrays:
            raise CheckpointError(f"checkpoint lacks tensor {name}")
        a[...] = arrays.pop(name)
    return net, header["extra"], arrays
