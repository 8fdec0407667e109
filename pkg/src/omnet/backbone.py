"""Residual encoder-decoder backbone, task heads and network assemblies.

The backbone is a small 3D FusionNet-style network: residual blocks at each
level, strided convolutions down, transposed convolutions up with additive
long skips, and a final 3x3x3 projection to ``feature_channels``. A task head
is one 3x3x3 convolution plus a 1x1x1 classifier; CGA heads replace the plain
classifier with the CompSeg block.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .attention import CORE_CLASSES, TUMOR_CLASSES, category_marginals, cga_forward, compseg, csci, se_block
from .errors import ShapeError
from .tensor import Tensor

ATTENTION_MODES = ("none", "se", "cga")


@dataclass(frozen=True)
class NetworkConfig:
    patch: tuple[int, int, int] = (32, 32, 16)
    in_channels: int = 4
    base_channels: int = 8
    feature_channels: int = 16
    depth: int = 3
    num_classes: tuple[int, int, int] = (5, 5, 2)
    attention: str = "none"
    se_reduction: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))
        object.__setattr__(self, "num_classes", tuple(int(v) for v in self.num_classes))
        if len(self.patch) != 3 or len(self.num_classes) != 3:
            raise ValueError("patch and num_classes need three entries")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        factor = 2 ** (self.depth - 1)
        if any(e % factor for e in self.patch):
            raise ShapeError(f"patch {self.patch} not divisible by {factor} (depth {self.depth})")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")
        if self.attention == "se" and self.se_reduction > self.feature_channels:
            raise ValueError("se_reduction exceeds feature channel count")

    @classmethod
    def full(cls, **overrides) -> "NetworkConfig":
        """Full-width configuration (32 feature maps at the heads)."""
        values = dict(base_channels=32, feature_channels=32, depth=3)
        values.update(overrides)
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


class Module:
    """Parameter container; parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def lr_scales(self) -> dict[int, float]:
        """Per-parameter learning-rate multipliers keyed by ``id(param)``."""
        scales = dict(getattr(self, "_lr_scale", {}))
        for value in vars(self).values():
            children = value if isinstance(value, (list, tuple)) else [value]
            for child in children:
                if isinstance(child, Module):
                    scales.update(child.lr_scales())
        return scales

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=T.DTYPE)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()


def count_parameters(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def _param(shape, rng, fan_in: int | None) -> Tensor:
    if fan_in is None:
        data = np.zeros(shape, dtype=T.DTYPE)
    else:
        limit = np.sqrt(6.0 / fan_in)
        data = rng.uniform(-limit, limit, size=shape).astype(T.DTYPE)
    return Tensor(data, requires_grad=True)


class Conv(Module):
    """3D convolution layer (``transposed=True`` for deconvolution).

    Weights are He-uniform from the shared rng; ``zero=True`` starts them at
    zero (used for classifiers so initial logits are flat).
    """

    def __init__(self, cin: int, cout: int, kernel: int, rng, stride: int = 1, padding: int = 0,
                 transposed: bool = False, zero: bool = False):
        fan_in = cin * kernel ** 3
        if transposed:
            fan_in = max(1, fan_in // stride ** 3)
        self.weight = _param((kernel, kernel, kernel, cin, cout), rng, None if zero else fan_in)
        self.bias = _param((cout,), rng, None)
        self._stride = stride
        self._padding = padding
        self._transposed = transposed

    @property
    def in_channels(self) -> int:
        return self.weight.shape[3]

    def __call__(self, x: Tensor) -> Tensor:
        op = T.deconv3d if self._transposed else T.conv3d
        return op(x, self.weight, self.bias, stride=self._stride, padding=self._padding)


class ResidualBlock(Module):
    def __init__(self, channels: int, rng):
        self.conv1 = Conv(channels, channels, 3, rng, padding=1)
        self.conv2 = Conv(channels, channels, 3, rng, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(T.residual_add(x, self.conv2(T.relu(self.conv1(x)))))


class Backbone(Module):
    def __init__(self, config: NetworkConfig, rng):
        widths = [config.base_channels * 2 ** i for i in range(config.depth)]
        self.stem = Conv(config.in_channels, widths[0], 3, rng, padding=1)
        self.encoders = [ResidualBlock(w, rng) for w in widths[:-1]]
        self.downs = [Conv(widths[i], widths[i + 1], 2, rng, stride=2) for i in range(config.depth - 1)]
        self.bottom = ResidualBlock(widths[-1], rng)
        self.ups = [Conv(widths[i + 1], widths[i], 2, rng, stride=2, transposed=True)
                    for i in range(config.depth - 1)]
        self.decoders = [ResidualBlock(w, rng) for w in widths[:-1]]
        self.project = Conv(widths[0], config.feature_channels, 3, rng, padding=1)
        self._in_channels = config.in_channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self._in_channels:
            raise ShapeError(f"backbone expects {self._in_channels} input channels, got {x.shape}")
        h = T.relu(self.stem(x))
        skips = []
        for enc, down in zip(self.encoders, self.downs):
            h = enc(h)
            skips.append(h)
            h = T.relu(down(h))
        h = self.bottom(h)
        for i in reversed(range(len(self.ups))):
            h = T.relu(self.ups[i](h))
            h = self.decoders[i](T.residual_add(h, skips[i]))
        return T.relu(self.project(h))


class TaskHead(Module):
    """Task-specific 3x3x3 conv + relu, optional SE, then a 1x1x1 classifier."""

    def __init__(self, channels: int, num_classes: int, rng, se_reduction: int | None = None):
        self.conv = Conv(channels, channels, 3, rng, padding=1)
        if se_reduction is not None:
            if se_reduction > channels or se_reduction < 1:
                raise ValueError(f"reduction ratio {se_reduction} invalid for {channels} channels")
            hidden = max(1, channels // se_reduction)
            self.se_w1 = _param((channels, hidden), rng, channels)
            self.se_b1 = _param((hidden,), rng, None)
            self.se_w2 = _param((hidden, channels), rng, hidden)
            self.se_b2 = _param((channels,), rng, None)
        self.classifier = Conv(channels, num_classes, 1, rng, zero=True)
        self.num_classes = num_classes
        self._se = se_reduction is not None

    def task_features(self, features: Tensor) -> Tensor:
        if features.shape[-1] != self.conv.in_channels:
            raise ShapeError(f"head expects {self.conv.in_channels} channels, got {features.shape}")
        f = T.relu(self.conv(features))
        if self._se:
            f = se_block(f, self.se_w1, self.se_b1, self.se_w2, self.se_b2)
        return f

    def __call__(self, features: Tensor, guidance=None) -> Tensor:
        return self.classifier(self.task_features(features))


class CGAHead(Module):
    """Task head whose classifier is the CompSeg block driven by guidance probabilities."""

    def __init__(self, channels: int, num_classes: int, class_set: Sequence[int], rng):
        self.conv = Conv(channels, channels, 3, rng, padding=1)
        self.tumor = Conv(channels, num_classes, 1, rng, zero=True)
        self.normal = Conv(channels, num_classes, 1, rng, zero=True)
        self.merge = Conv(num_classes, num_classes, 1, rng)
        self.num_classes = num_classes
        self.class_set = tuple(class_set)
        # The importance vectors sum to 1, so the recalibrated features are about
        # 1/C the size of the plain ones. Scaling the classifier rate by C^2 gives
        # the same training dynamics as a classifier on unscaled features.
        self._lr_scale = {id(self.tumor.weight): float(channels ** 2), id(self.normal.weight): float(channels ** 2)}

    def task_features(self, features: Tensor) -> Tensor:
        if features.shape[-1] != self.conv.in_channels:
            raise ShapeError(f"head expects {self.conv.in_channels} channels, got {features.shape}")
        return T.relu(self.conv(features))

    def compseg_params(self) -> dict:
        return {"tumor_w": self.tumor.weight, "tumor_b": self.tumor.bias,
                "normal_w": self.normal.weight, "normal_b": self.normal.bias,
                "merge_w": self.merge.weight, "merge_b": self.merge.bias}

    def importance(self, features: Tensor, guidance) -> tuple[Tensor, Tensor]:
        p_t, p_n = category_marginals(guidance, self.class_set)
        return csci(self.task_features(features), p_t, p_n)

    def __call__(self, features: Tensor, guidance=None) -> Tensor:
        if guidance is None:
            raise ValueError("CGA head called without guidance probabilities")
        f = self.task_features(features)
        p_t, p_n = category_marginals(guidance, self.class_set)
        m_t, m_n = csci(f, p_t, p_n)
        return compseg(f, m_t, m_n, p_t, p_n, self.compseg_params())


def forward_task(features: Tensor, head, guidance=None) -> Tensor:
    """Per-voxel logits of one head on backbone features."""
    return head(features, guidance)


class OMNet(Module):
    """Shared backbone with three task heads, evaluated in one pass at test time."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        ch, classes = config.feature_channels, config.num_classes
        self.backbone = Backbone(config, rng)
        se = config.se_reduction if config.attention == "se" else None
        if config.attention == "cga":
            self.heads = [TaskHead(ch, classes[0], rng),
                          CGAHead(ch, classes[1], TUMOR_CLASSES, rng),
                          CGAHead(ch, classes[2], CORE_CLASSES, rng)]
        else:
            self.heads = [TaskHead(ch, c, rng, se_reduction=se) for c in classes]

    kind = "omnet"

    def guidance_chain(self, task: int) -> list:
        if self.config.attention == "cga":
            return self.heads[:task]
        return [self.heads[task - 1]]

    def features(self, x: Tensor) -> Tensor:
        return self.backbone(x)

    def task_logits(self, task: int, features: Tensor) -> Tensor:
        """Logits of ``task`` (1-based) on features, including its guidance chain."""
        return cga_forward(features, self.guidance_chain(task))

    def forward_all(self, x: Tensor) -> list[Tensor]:
        """Logits of all three tasks from a single backbone pass."""
        feats = self.features(x)
        outputs, guidance = [], None
        for head in self.heads:
            logits = head(feats, guidance)
            outputs.append(logits)
            guidance = T.softmax_channels(logits).data
        return outputs

    def predict_probs(self, x: np.ndarray) -> list[np.ndarray]:
        with T.no_grad():
            return [T.softmax_channels(l).data for l in self.forward_all(Tensor(x))]

    def task_head_parameters(self, task: int) -> list[Tensor]:
        return self.heads[task - 1].parameters()


class SingleTaskNet(Module):
    """One member of the model cascade: its own backbone and a single head."""

    def __init__(self, config: NetworkConfig, task: int):
        self.config = config
        self.task = task
        rng = np.random.default_rng(config.seed)
        self.backbone = Backbone(config, rng)
        se = config.se_reduction if config.attention == "se" else None
        self.head = TaskHead(config.feature_channels, config.num_classes[task - 1], rng, se_reduction=se)

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(self.backbone(x))

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return T.softmax_channels(self(Tensor(x))).data


class ModelCascade(Module):
    kind = "cascade"

    def __init__(self, configs: Sequence[NetworkConfig]):
        self.configs = list(configs)
        self.nets = [SingleTaskNet(cfg, task) for task, cfg in enumerate(self.configs, start=1)]

    @property
    def config(self) -> NetworkConfig:
        return self.configs[0]

    def predict_probs(self, x: np.ndarray) -> list[np.ndarray]:
        return [net.predict_probs(x) for net in self.nets]


def build(config: NetworkConfig) -> OMNet:
    return OMNet(config)


def build_cascade(config: NetworkConfig, networks: int = 3, per_task_classes: bool = True) -> ModelCascade:
    """Cascade of ``networks`` independently seeded single-task networks.

    With ``per_task_classes=False`` every member uses the first task's class
    count, i.e. identical per-network configurations.
    """
    configs = []
    for k in range(networks):
        classes = config.num_classes if per_task_classes else (config.num_classes[0],) * 3
        configs.append(NetworkConfig.from_dict({**config.to_dict(), "seed": config.seed + 1000 * k,
                                                "num_classes": classes}))
    return ModelCascade(configs)
