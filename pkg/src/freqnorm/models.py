"""Mini residual networks with swappable downsample normalization.

Three variants share one topology (stem, four stride-2 stages of basic
blocks, global average pool, linear head); they differ only in the
normalization inside the 1x1 stride-2 downsample shortcut and in
optional style-blending modules between stages:

    baseline -- batch norm in the downsample layer, nothing else
    dac_p    -- pcnorm in every downsample layer
    dac_sc   -- ccnorm in every downsample layer, plus scnorm at the
                configured stage ends (defaults: stages 1-3)

Checkpoints are a directory: a plain-text manifest listing every
parameter/buffer name with its logical shape, plus one binary tensor
file per array.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, ShapeError, UnknownModuleError
from .kvfile import read_kv, write_kv
from .layers import (AdjustParams, BatchNorm2d, CCNorm, Conv2d, Layer,
                     Linear, PCNorm, SCNorm)
from .tensor import Tensor, read_tensor, write_tensor, from_array

VARIANTS = ("baseline", "dac_p", "dac_sc")

CHECKPOINT_FORMAT = "freqnorm-checkpoint-v1"


@dataclass
class ModelSpec:
    variant: str
    stages: tuple[tuple[int, int], ...] = ((1, 16), (1, 32), (1, 64), (1, 128))
    input_shape: tuple[int, int, int] = (3, 32, 32)
    classes: int = 5
    scnorm_positions: tuple[int, ...] = (1, 2, 3)
    t_c: float = 1e-6
    t_s: float = 0.1
    scnorm_scheme: str = "instance"
    stats_momentum: float | None = 0.1
    stop_stats_grad: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.stages = tuple((int(b), int(c)) for b, c in self.stages)
        if not self.stages or any(b < 1 or c < 1 for b, c in self.stages):
            raise ConfigError(f"stages must be non-empty (blocks, channels) pairs, got {self.stages}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        self.scnorm_positions = tuple(sorted(int(p) for p in self.scnorm_positions))
        if any(p < 1 or p > len(self.stages) for p in self.scnorm_positions):
            raise ConfigError(
                f"scnorm positions {self.scnorm_positions} outside stages 1..{len(self.stages)}"
            )
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ConfigError(f"input_shape must be (c, h, w) >= 1, got {self.input_shape}")


class Downsample(Layer):
    """1x1 stride-2 projection with the variant's normalization."""

    def __init__(self, c_in: int, c_out: int, variant: str,
                 rng: np.random.Generator, spec: ModelSpec):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown downsample variant {variant!r}")
        self.variant = variant
        self.conv = Conv2d(c_in, c_out, k=1, stride=2, pad=0, bias=False, rng=rng)
        kw = dict(momentum=spec.stats_momentum, stop_stats_grad=spec.stop_stats_grad)
        if variant == "baseline":
            self.norm = BatchNorm2d(c_out, affine=True, **kw)
        elif variant == "dac_p":
            self.norm = PCNorm(c_out, affine=True, **kw)
        else:
            self.norm = CCNorm(c_out, temperature=spec.t_c, affine=True, **kw)

    def __call__(self, x: Node, train: bool) -> Node:
        return self.norm(self.conv(x), train)

    def forward_tensor(self, x: Tensor, train: bool = True) -> Tensor:
        return Tensor(self(Node(x.data), train).value)

    def set_adjust(self, a: AdjustParams) -> None:
        if self.variant != "dac_sc":
            raise ConfigError("adjust weights only apply to the ccnorm downsample")
        self.norm.raw.value = np.asarray(a.raw, dtype=np.float64).reshape(2)
        self.norm.temperature = a.temperature

    def params(self):
        out = [("conv." + n, p) for n, p in self.conv.params()]
        out += [("norm." + n, p) for n, p in self.norm.params()]
        return out

    def buffers(self):
        return [("norm." + n, b) for n, b in self.norm.buffers()]

    def load_buffers(self, values):
        self.norm.load_buffers({k.removeprefix("norm."): v for k, v in values.items()})


class BasicBlock(Layer):
    """Two 3x3 convs with batch norm; shortcut is either the identity or
    the stage's downsample layer."""

    def __init__(self, c_in: int, c_out: int, stride: int, variant: str,
                 rng: np.random.Generator, spec: ModelSpec):
        kw = dict(momentum=spec.stats_momentum, stop_stats_grad=spec.stop_stats_grad)
        self.conv1 = Conv2d(c_in, c_out, k=3, stride=stride, pad=1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(c_out, affine=True, **kw)
        self.conv2 = Conv2d(c_out, c_out, k=3, stride=1, pad=1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(c_out, affine=True, **kw)
        if stride != 1 or c_in != c_out:
            self.down: Downsample | None = Downsample(c_in, c_out, variant, rng, spec)
        else:
            self.down = None

    def __call__(self, x: Node, train: bool) -> Node:
        h = ad.relu(self.bn1(self.conv1(x), train))
        h = self.bn2(self.conv2(h), train)
        shortcut = self.down(x, train) if self.down is not None else x
        return ad.relu(ad.add(h, shortcut))

    def params(self):
        out = []
        for prefix, layer in (("conv1", self.conv1), ("bn1", self.bn1),
                              ("conv2", self.conv2), ("bn2", self.bn2)):
            out += [(f"{prefix}.{n}", p) for n, p in layer.params()]
        if self.down is not None:
            out += [(f"down.{n}", p) for n, p in self.down.params()]
        return out

    def buffers(self):
        out = []
        for prefix, layer in (("bn1", self.bn1), ("bn2", self.bn2)):
            out += [(f"{prefix}.{n}", b) for n, b in layer.buffers()]
        if self.down is not None:
            out += [(f"down.{n}", b) for n, b in self.down.buffers()]
        return out

    def load_buffers(self, values):
        for prefix, layer in (("bn1", self.bn1), ("bn2", self.bn2), ("down", self.down)):
            if layer is None:
                continue
            sub = {k.removeprefix(prefix + "."): v
                   for k, v in values.items() if k.startswith(prefix + ".")}
            layer.load_buffers(sub)


class Model:
    """Built network: stem, stages, optional scnorm modules, head."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 77])))
        c_in, _, _ = spec.input_shape
        kw = dict(momentum=spec.stats_momentum, stop_stats_grad=spec.stop_stats_grad)

        stem_c = spec.stages[0][1]
        self.stem_conv = Conv2d(c_in, stem_c, k=3, stride=1, pad=1, bias=False, rng=rng)
        self.stem_bn = BatchNorm2d(stem_c, affine=True, **kw)

        self.stages: list[list[BasicBlock]] = []
        self.scnorms: dict[int, SCNorm] = {}
        prev = stem_c
        for si, (blocks, channels) in enumerate(spec.stages, start=1):
            stage = [BasicBlock(prev, channels, 2, spec.variant, rng, spec)]
            for _ in range(blocks - 1):
                stage.append(BasicBlock(channels, channels, 1, spec.variant, rng, spec))
            self.stages.append(stage)
            prev = channels
            if spec.variant == "dac_sc" and si in spec.scnorm_positions:
                self.scnorms[si] = SCNorm(channels, scheme=spec.scnorm_scheme,
                                          temperature=spec.t_s, affine=False, **kw)
        self.head = Linear(prev, spec.classes, rng=rng)

    # -- forward ------------------------------------------------------------

    def forward(self, x, train: bool) -> Node:
        if isinstance(x, Tensor):
            x = x.data
        node = Node(np.asarray(x, dtype=np.float64))
        if node.value.ndim != 4 or node.value.shape[1] != self.spec.input_shape[0]:
            raise ShapeError(
                f"expected input (n, {self.spec.input_shape[0]}, h, w), got {node.value.shape}"
            )
        h = ad.relu(self.stem_bn(self.stem_conv(node), train))
        for si, stage in enumerate(self.stages, start=1):
            for block in stage:
                h = block(h, train)
            if si in self.scnorms:
                h = self.scnorms[si](h, train)
        return self.head(ad.global_avg_pool(h))

    def predict(self, x) -> np.ndarray:
        return self.forward(x, train=False).value

    # -- parameter access -----------------------------------------------------

    def _layers(self) -> list[tuple[str, Layer]]:
        out: list[tuple[str, Layer]] = [("stem.conv", self.stem_conv), ("stem.bn", self.stem_bn)]
        for si, stage in enumerate(self.stages, start=1):
            for bi, block in enumerate(stage, start=1):
                out.append((f"stage{si}.block{bi}", block))
            if si in self.scnorms:
                out.append((f"scnorm{si}", self.scnorms[si]))
        out.append(("head", self.head))
        return out

    def parameters(self) -> list[tuple[str, Node]]:
        out = []
        for prefix, layer in self._layers():
            out += [(f"{prefix}.{n}", p) for n, p in layer.params()]
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, layer in self._layers():
            out += [(f"{prefix}.{n}", b) for n, b in layer.buffers()]
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.value.size for _, p in self.parameters())

    def get_state(self) -> dict[str, np.ndarray]:
        state = {f"param.{n}": p.value.copy() for n, p in self.parameters()}
        state.update({f"buffer.{n}": b.copy() for n, b in self.buffers()})
        return state

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            p.value = state[f"param.{name}"].copy()
        for lname, layer in self._layers():
            sub = {}
            for bname, _ in layer.buffers():
                sub[bname] = state[f"buffer.{lname}.{bname}"].copy()
            if sub:
                layer.load_buffers(sub)

    def copy_common_params(self, other: "Model") -> int:
        """Copy parameters and running buffers shared by name from `other`."""
        mine = dict(self.parameters())
        copied = 0
        for name, p in other.parameters():
            if name in mine and mine[name].value.shape == p.value.shape:
                mine[name].value = p.value.copy()
                copied += 1
        their_buffers = dict(other.buffers())
        by_layer = {name: layer for name, layer in self._layers()}
        for lname, layer in by_layer.items():
            sub = {}
            for bname, _ in layer.buffers():
                full = f"{lname}.{bname}"
                if full in their_buffers:
                    sub[bname] = their_buffers[full].copy()
            if sub:
                layer.load_buffers(sub)
        return copied

    # -- adjust (lambda) modules ----------------------------------------------

    def adjust_modules(self) -> list[tuple[str, str, Layer]]:
        """(module_id, position, layer) for every ccnorm/scnorm module."""
        out = []
        ccount = 0
        for si, stage in enumerate(self.stages, start=1):
            for block in stage:
                if block.down is not None and isinstance(block.down.norm, CCNorm):
                    ccount += 1
                    out.append((f"ccnorm{ccount}", f"stage{si}", block.down.norm))
        for si in sorted(self.scnorms):
            out.append((f"scnorm{si}", f"stage{si}", self.scnorms[si]))
        return out

    def _find_adjust(self, module_id: str):
        for mid, pos, layer in self.adjust_modules():
            if mid == module_id:
                return pos, layer
        raise UnknownModuleError(module_id)

    def freeze_lambda(self, module_id: str, lam_org: float) -> None:
        """Pin a module's pair at (1 - lam_org, lam_org)."""
        if not 0.0 <= lam_org <= 1.0:
            raise ConfigError(f"lambda_org must lie in [0, 1], got {lam_org}")
        _, layer = self._find_adjust(module_id)
        layer.fixed_pair = (1.0 - float(lam_org), float(lam_org))

    def unfreeze_lambda(self, module_id: str) -> None:
        _, layer = self._find_adjust(module_id)
        layer.fixed_pair = None

    # -- checkpoint io ----------------------------------------------------------

    def save(self, path: str | os.PathLike, meta: dict[str, str] | None = None) -> None:
        path = os.fspath(path)
        os.makedirs(os.path.join(path, "params"), exist_ok=True)
        os.makedirs(os.path.join(path, "buffers"), exist_ok=True)
        manifest: dict[str, str] = {
            "format": CHECKPOINT_FORMAT,
            "variant": self.spec.variant,
            "classes": str(self.spec.classes),
            "input": _csv(self.spec.input_shape),
            "stages": ";".join(f"{b}:{c}" for b, c in self.spec.stages),
            "scnorm_positions": _csv(self.spec.scnorm_positions),
            "t_c": repr(self.spec.t_c),
            "t_s": repr(self.spec.t_s),
            "scnorm_scheme": self.spec.scnorm_scheme,
            "stats_momentum": ("cumulative" if self.spec.stats_momentum is None
                               else repr(self.spec.stats_momentum)),
        }
        for name, p in self.parameters():
            manifest[f"param.{name}"] = _csv(p.value.shape)
            write_tensor(os.path.join(path, "params", name + ".tnsr"), _lift4d(p.value))
        for name, b in self.buffers():
            manifest[f"buffer.{name}"] = _csv(b.shape)
            write_tensor(os.path.join(path, "buffers", name + ".tnsr"), _lift4d(b))
        for key, value in (meta or {}).items():
            manifest[f"meta.{key}"] = str(value)
        write_kv(os.path.join(path, "manifest.txt"), manifest)

    @classmethod
    def load(cls, path: str | os.PathLike, seed: int = 0) -> tuple["Model", dict[str, str]]:
        path = os.fspath(path)
        manifest = read_kv(os.path.join(path, "manifest.txt"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise IOError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        momentum = manifest["stats_momentum"]
        spec = ModelSpec(
            variant=manifest["variant"],
            stages=tuple(tuple(int(v) for v in part.split(":"))
                         for part in manifest["stages"].split(";")),
            input_shape=tuple(int(v) for v in manifest["input"].split(",")),
            classes=int(manifest["classes"]),
            scnorm_positions=tuple(int(v) for v in manifest["scnorm_positions"].split(",")
                                   if v != ""),
            t_c=float(manifest["t_c"]),
            t_s=float(manifest["t_s"]),
            scnorm_scheme=manifest["scnorm_scheme"],
            stats_momentum=None if momentum == "cumulative" else float(momentum),
        )
        model = cls(spec, seed=seed)
        for name, p in model.parameters():
            key = f"param.{name}"
            if key not in manifest:
                raise IOError(f"{path}: manifest missing {key}")
            shape = _parse_shape(manifest[key])
            t = read_tensor(os.path.join(path, "params", name + ".tnsr"))
            p.value = t.data.reshape(shape).copy()
        by_layer = {name: layer for name, layer in model._layers()}
        for lname, layer in by_layer.items():
            sub = {}
            for bname, _ in layer.buffers():
                full = f"buffer.{lname}.{bname}"
                if full not in manifest:
                    raise IOError(f"{path}: manifest missing {full}")
                shape = _parse_shape(manifest[full])
                t = read_tensor(os.path.join(path, "buffers", f"{lname}.{bname}.tnsr"))
                sub[bname] = t.data.reshape(shape).copy()
            if sub:
                layer.load_buffers(sub)
        meta = {k.removeprefix("meta."): v for k, v in manifest.items()
                if k.startswith("meta.")}
        return model, meta


def build(spec: ModelSpec, seed: int = 0) -> Model:
    return Model(spec, seed=seed)


def forward(model: Model, batch, train: bool = False) -> np.ndarray:
    """Logits of a batch, shape (n, classes)."""
    return model.forward(batch, train).value


def _csv(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "":
        return ()
    return tuple(int(v) for v in text.split(","))


def _lift4d(arr: np.ndarray) -> Tensor:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim > 4:
        raise ShapeError(f"cannot store {arr.ndim}-D array in the tensor format")
    shape = (1,) * (4 - arr.ndim) + arr.shape
    return from_array(arr.reshape(shape))
