"""HMTNet: concatenated-feature extractor plus a topology-ordered per-joint regressor.

Feature path (96x96 input)::

    conv7x7 -> ReLU ------------------------------------- maxpool4 --+
      -> maxpool2 -> residual -> maxpool2 -> residual -> residual ----+-> concat -> merged (24x24)
                                                                             |
                                                     1x1 conv -> feature heatmaps

HMT regressor: one block per joint, visited root first and then each
finger proximal to distal. A joint's block sees the merged feature
stacked with its predecessor's predicted heatmap and emits that joint's
heatmap plus a local feature; pooled local features feed FC+dropout and
a final FC producing the 3J normalised coordinates.

With ``use_hmt=False`` the regressor is the ablation baseline: two
residual modules, FC+dropout, FC.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, ShapeError
from .heatmap import HEATMAP_SIZE
from .layers import (
    concat_channels,
    conv2d,
    dropout,
    fully_connected,
    init_conv,
    init_fc,
    init_residual,
    max_pool2d,
    residual_block,
    upsample2d,
)
from .preprocessing import PATCH_SIZE
from .tensor import Parameter, Tensor, concat
from .topology import Topology, hmt_order, topology_for


@dataclass(frozen=True)
class NetworkConfig:
    dataset: str = "msra"
    use_concat: bool = True
    use_hmt: bool = True
    base_channels: int = 32
    feature_channels: int = 64
    joint_channels: int = 16
    fc_width: int = 1024
    dropout_rate: float = 0.3
    heatmap_size: int = HEATMAP_SIZE
    input_size: int = PATCH_SIZE
    branch_pool: int = 4
    deep_feature: bool = False

    def __post_init__(self):
        if self.input_size != 4 * self.heatmap_size:
            raise ConfigurationError(
                f"input {self.input_size} must reduce to the {self.heatmap_size} heatmap via two 2x pools"
            )
        if self.heatmap_size % self.branch_pool:
            raise ConfigurationError(f"branch_pool {self.branch_pool} must divide {self.heatmap_size}")
        if self.deep_feature and self.heatmap_size % 2:
            raise ConfigurationError("deep_feature needs an even heatmap size")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("base_channels", "feature_channels", "joint_channels", "fc_width"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        topology_for(self.dataset)

    @property
    def merged_channels(self) -> int:
        return self.feature_channels + (self.base_channels if self.use_concat else 0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def ablation_variant(use_concat: bool, use_hmt: bool, base: NetworkConfig | None = None) -> NetworkConfig:
    """One cell of the concat x hmt ablation matrix, other settings from ``base``."""
    base = NetworkConfig() if base is None else base
    return dataclasses.replace(base, use_concat=use_concat, use_hmt=use_hmt)


def variant_name(config: NetworkConfig) -> str:
    return f"{'concat' if config.use_concat else 'base'}+{'hmt' if config.use_hmt else 'base'}"


@dataclass
class ForwardOutput:
    feature_heatmaps: Tensor  # (B, J, 24, 24)
    hmt_heatmaps: Tensor  # (B, J, 24, 24)
    joints: Tensor  # (B, 3J), normalised cube coordinates


class HMTNet:
    def __init__(self, config: NetworkConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        self.config = config
        self.topology: Topology = topology_for(config.dataset)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params: dict[str, Parameter] = {}
        self._build(rng)

    # -- construction -----------------------------------------------------------

    def _register(self, *groups):
        for group in groups:
            if isinstance(group, dict):
                self._register(*group.values())
            elif isinstance(group, tuple):
                self._register(*group)
            elif isinstance(group, Parameter):
                if group.name in self.params:
                    raise ConfigurationError(f"duplicate parameter name {group.name}")
                self.params[group.name] = group
        return groups[0] if len(groups) == 1 else groups

    def _build(self, rng):
        c, dt, J = self.config, self.dtype, self.topology.J
        self.conv1 = self._register(init_conv(rng, "feat.conv1", 1, c.base_channels, 7, dt))
        self.res1 = self._register(init_residual(rng, "feat.res1", c.base_channels, c.feature_channels, dt))
        self.res2 = self._register(init_residual(rng, "feat.res2", c.feature_channels, c.feature_channels, dt))
        self.res3 = self._register(init_residual(rng, "feat.res3", c.feature_channels, c.feature_channels, dt))
        if c.deep_feature:
            self.res_deep = self._register(
                init_residual(rng, "feat.res_deep", c.feature_channels, c.feature_channels, dt))
        merged = c.merged_channels
        self.head = self._register(init_conv(rng, "feat.head", merged, J, 1, dt, gain=1.0))
        cells = (c.heatmap_size // c.branch_pool) ** 2

        if c.use_hmt:
            self.order = [(self.topology.root, None)] + hmt_order(self.topology)
            self.blocks: dict[int, dict] = {}
            for joint, pred in self.order:
                name = f"hmt.j{joint:02d}"
                block = {
                    "shared": init_conv(rng, f"{name}.shared", merged, c.joint_channels, 3, dt),
                    "heat": init_conv(rng, f"{name}.heat", c.joint_channels, 1, 1, dt, gain=1.0),
                }
                if pred is not None:
                    kernel, _ = init_conv(rng, f"{name}.cond", 1, c.joint_channels, 3, dt)
                    block["cond"] = kernel
                self.blocks[joint] = self._register(block)
            fc_in = J * c.joint_channels * cells
        else:
            self.reg1 = self._register(init_residual(rng, "reg.res1", merged, c.feature_channels, dt))
            self.reg2 = self._register(init_residual(rng, "reg.res2", c.feature_channels, c.feature_channels, dt))
            fc_in = c.feature_channels * cells
        self.fc1 = self._register(init_fc(rng, "reg.fc1", fc_in, c.fc_width, dt))
        self.fc2 = self._register(init_fc(rng, "reg.fc2", c.fc_width, 3 * J, dt, gain=1.0))

    # -- forward ---------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def features(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(merged feature, feature heatmaps)`` at heatmap resolution."""
        c = self.config
        f0 = conv2d(x, *self.conv1, stride=1, padding=3).relu()
        h = max_pool2d(f0, 2)
        h = residual_block(h, self.res1)
        h = max_pool2d(h, 2)
        h = residual_block(h, self.res2)
        h = residual_block(h, self.res3)
        if c.deep_feature:
            d = residual_block(max_pool2d(h, 2), self.res_deep)
            h = h + upsample2d(d, 2)
        merged = concat_channels(max_pool2d(f0, 4), h) if c.use_concat else h
        return merged, conv2d(merged, *self.head)

    def hmt_block(self, joint: int, merged_or_shared: Tensor, condition: Tensor | None,
                  shared_precomputed: bool = False) -> tuple[Tensor, Tensor]:
        """One joint's block: ``(heatmap (B,1,h,w), local feature)``.

        ``condition`` is the predecessor's heatmap, or None for the root
        (a zero map contributes nothing to the convolution).
        """
        block = self.blocks[joint]
        a = merged_or_shared if shared_precomputed else conv2d(merged_or_shared, *block["shared"], padding=1)
        if condition is not None:
            a = a + conv2d(condition, block["cond"], None, padding=1)
        local = a.relu()
        return conv2d(local, *block["heat"]), local

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> ForwardOutput:
        c = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1:] != (1, c.input_size, c.input_size):
            raise ShapeError(f"expected input (B, 1, {c.input_size}, {c.input_size}), got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        merged, feat_hm = self.features(x)

        if c.use_hmt:
            # all joints' feature convolutions share one im2col pass
            kernels = concat([self.blocks[j]["shared"][0] for j, _ in self.order], axis=0)
            biases = concat([self.blocks[j]["shared"][1] for j, _ in self.order], axis=0)
            shared = conv2d(merged, kernels, biases, padding=1)
            jc = c.joint_channels
            maps: dict[int, Tensor] = {}
            locals_: dict[int, Tensor] = {}
            for slot, (joint, pred) in enumerate(self.order):
                part = shared[:, slot * jc:(slot + 1) * jc]
                maps[joint], locals_[joint] = self.hmt_block(
                    joint, part, None if pred is None else maps[pred], shared_precomputed=True)
            J = self.topology.J
            hmt_hm = concat_channels([maps[j] for j in range(J)])
            pooled = concat_channels([max_pool2d(locals_[j], c.branch_pool) for j in range(J)])
        else:
            r = residual_block(merged, self.reg1)
            r = residual_block(r, self.reg2)
            pooled = max_pool2d(r, c.branch_pool)
            # baseline has no per-joint maps; the copy carries no gradient
            hmt_hm = Tensor(feat_hm.data.copy())

        z = fully_connected(pooled.flatten(), *self.fc1).relu()
        z = dropout(z, c.dropout_rate, training, rng)
        joints = fully_connected(z, *self.fc2)
        return ForwardOutput(feat_hm, hmt_hm, joints)

    __call__ = forward

    # -- persistence -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        unexpected = set(arrays) - set(self.params)
        if missing or unexpected:
            raise ConfigurationError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data[...] = arr.astype(self.dtype)

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"network": self.config.to_dict()}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.state_dict(), meta)


def build(config: NetworkConfig, rng: np.random.Generator | None = None, dtype=np.float32) -> HMTNet:
    return HMTNet(config, rng, dtype)


def load_network(path, dtype=np.float32) -> tuple[HMTNet, dict]:
    arrays, meta = load_checkpoint(path)
    net = HMTNet(NetworkConfig.from_dict(meta["network"]), np.random.default_rng(0), dtype)
    net.load_state_dict(arrays)
    return net, meta
