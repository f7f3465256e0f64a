"""Shallow residual refinement network.

Input: normalized bicubic-upsampled DSM (1 channel) concatenated with the
normalized guide. Layout, all convs 3x3:

    conv_in -> relu
    n_scale_stages x [stride-2 conv -> relu]
    n_res_blocks   x [conv -> relu -> conv, + shortcut]
    n_scale_stages x [nearest x2 -> conv -> relu]
    proj (zero-initialized, 1 channel) + input DSM channel

The projection starts at zero, so a freshly built network returns its DSM
input unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad as gc
from .errors import InvalidInputError, ShapeError


@dataclass(frozen=True)
class RefineNetConfig:
    hidden_dim: int = 64
    n_res_blocks: int = 4
    n_scale_stages: int = 2
    guide_channels: int = 3
    kernel_size: int = 3

    def __post_init__(self):
        if self.hidden_dim < 8:
            raise InvalidInputError(f"hidden_dim must be >= 8, got {self.hidden_dim}")
        if self.n_res_blocks < 1:
            raise InvalidInputError("n_res_blocks must be >= 1")
        if self.n_scale_stages < 0:
            raise InvalidInputError("n_scale_stages must be >= 0")
        if self.guide_channels < 1:
            raise InvalidInputError("guide_channels must be >= 1")
        if self.kernel_size != 3:
            raise InvalidInputError("only 3x3 kernels are supported")

    @property
    def size_multiple(self) -> int:
        return 2 ** self.n_scale_stages


def _conv_param(rng: np.random.Generator, name: str, cin: int, cout: int, zero: bool = False):
    shape = (cout, cin, 3, 3)
    if zero:
        w = np.zeros(shape)
    else:
        bound = 1.0 / np.sqrt(cin * 9)
        w = rng.uniform(-bound, bound, shape)
    return (gc.Parameter(f"{name}.weight", gc.Tensor(w)),
            gc.Parameter(f"{name}.bias", gc.Tensor(np.zeros(cout))))


class RefineNet:
    def __init__(self, config: RefineNetConfig, seed: int = 0):
        self.config = config
        rng = np.random.Generator(np.random.Philox(key=seed))
        hd = config.hidden_dim
        self.layers: dict[str, tuple[gc.Parameter, gc.Parameter]] = {}
        self.layers["conv_in"] = _conv_param(rng, "conv_in", config.guide_channels + 1, hd)
        for s in range(config.n_scale_stages):
            self.layers[f"down{s}"] = _conv_param(rng, f"down{s}", hd, hd)
        for b in range(config.n_res_blocks):
            self.layers[f"res{b}.a"] = _conv_param(rng, f"res{b}.a", hd, hd)
            self.layers[f"res{b}.b"] = _conv_param(rng, f"res{b}.b", hd, hd)
        for s in range(config.n_scale_stages):
            self.layers[f"up{s}"] = _conv_param(rng, f"up{s}", hd, hd)
        self.layers["proj"] = _conv_param(rng, "proj", hd, 1, zero=True)

    def parameters(self) -> list[gc.Parameter]:
        return [p for pair in self.layers.values() for p in pair]

    def parameter_count(self) -> int:
        return int(np.sum([p.tensor.size for p in self.parameters()]))

    def _conv(self, name: str, x: gc.Tensor, stride: int = 1) -> gc.Tensor:
        w, b = self.layers[name]
        return gc.conv2d(x, w.tensor, b.tensor, stride=stride, padding=1)

    def __call__(self, dsm_up: gc.Tensor, guide: gc.Tensor) -> gc.Tensor:
        return refine_forward(self, dsm_up, guide)


def build_refine_net(config: RefineNetConfig, seed: int = 0) -> RefineNet:
    return RefineNet(config, seed)


def refine_forward(net: RefineNet, dsm_up: gc.Tensor, guide: gc.Tensor) -> gc.Tensor:
    cfg = net.config
    if dsm_up.ndim != 4 or dsm_up.shape[1] != 1:
        raise ShapeError(f"dsm_up must be [N, 1, H, W], got {dsm_up.shape}")
    if guide.ndim != 4 or guide.shape[1] != cfg.guide_channels or guide.shape[2:] != dsm_up.shape[2:]:
        raise ShapeError(f"guide {guide.shape} does not match dsm {dsm_up.shape}")
    m = cfg.size_multiple
    if dsm_up.shape[2] % m or dsm_up.shape[3] % m:
        raise ShapeError(f"spatial size {dsm_up.shape[2:]} not divisible by {m}")

    x = gc.relu(net._conv("conv_in", gc.concat_channels(dsm_up, guide)))
    for s in range(cfg.n_scale_stages):
        x = gc.relu(net._conv(f"down{s}", x, stride=2))
    for b in range(cfg.n_res_blocks):
        x = gc.add(x, net._conv(f"res{b}.b", gc.relu(net._conv(f"res{b}.a", x))))
    for s in range(cfg.n_scale_stages):
        x = gc.relu(net._conv(f"up{s}", gc.upsample_nearest(x, 2)))
    return gc.add(net._conv("proj", x), dsm_up)


def layer_plan(config: RefineNetConfig) -> list[str]:
    """Spatial layer sequence: ``conv`` (3x3, stride 1), ``down`` (3x3, stride 2), ``up`` (nearest x2)."""
    plan = ["conv"]
    plan += ["down"] * config.n_scale_stages
    plan += ["conv"] * (2 * config.n_res_blocks)
    plan += ["up", "conv"] * config.n_scale_stages
    plan += ["conv"]
    return plan


def plan_bounds(plan: list[str], p: int) -> tuple[int, int]:
    """Inclusive range of input indices (one axis) that can influence output index ``p``.

    Walks the layers backwards. A padded 3x3 conv widens the interval by one
    sample on each side at its own resolution, a stride-2 conv maps index i
    to 2i-1 .. 2i+1 and nearest x2 upsampling maps i to i // 2.
    """
    lo = hi = p
    for layer in reversed(plan):
        if layer == "conv":
            lo, hi = lo - 1, hi + 1
        elif layer == "down":
            lo, hi = 2 * lo - 1, 2 * hi + 1
        elif layer == "up":
            lo, hi = lo // 2, hi // 2
        else:
            raise ValueError(f"unknown layer kind {layer!r}")
    return lo, hi


def plan_radius(plan: list[str]) -> int:
    """Largest pixel distance between an output and any input it depends on."""
    period = 2 ** plan.count("down")
    radius = 0
    for phase in range(period):
        lo, hi = plan_bounds(plan, phase)
        radius = max(radius, phase - lo, hi - phase)
    return radius


def receptive_field_bounds(config: RefineNetConfig, p: int) -> tuple[int, int]:
    return plan_bounds(layer_plan(config), p)


def receptive_field_radius(config: RefineNetConfig) -> int:
    return plan_radius(layer_plan(config))
