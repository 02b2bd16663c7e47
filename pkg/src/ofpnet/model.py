"""Omni-frequency decomposition and projection network.

The model is resolution preserving: it receives a low-resolution luma light
field already on the ground-truth grid and predicts a residual on the same
grid. Features flow through three frequency bands obtained with strided
convolutions and scale subtraction:

    full  = conv3x3(L)                 at (H, W)
    half  = conv3x3_s2(L)              at (H/2, W/2)
    quart = conv3x3_s2(half)           at (H/4, W/4)

    f_high = full - up2(half)
    f_mid  = half - up2(quart)
    f_low  = quart

The three decomposition convolutions carry no bias so the decomposition is
homogeneous: decompose(a * x) == a * decompose(x).

Each band is enhanced by projection stages built from paired up/down
projection units (iterative back-projection): an up unit lifts a feature,
re-projects it down, and corrects the lift with the residual; the down unit
mirrors this. Coarser bands feed into finer ones through 1x1 fusion
convolutions before the finer band's last stage. Reconstruction upsamples
all bands to full resolution, merges them, blends with spatial-angular
blocks under a global skip, and emits the residual through a zero-initialized
head, so a freshly built model is the identity map.

Tensor layout is (B, N, C, H, W) with N = U * V views flattened row-major.
Spatial convolutions fold views into the batch; angular convolutions reshape
to (B*H*W, C, U, V).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ColorspaceError, ConfigError, SizeError, StateError
from .lightfield import Colorspace, LightField, ScaleTag

BRANCH_MODES = ("full", "mid_high", "high_only")

ABLATION_VARIANTS = (
    "freq:h",
    "freq:mh",
    "freq:lmh",
    "proj:none",
    "proj:interact",
    "proj:fp",
    "proj:full",
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; `extra_*` exist for parameter parity.

    `extra_blocks` / `extra_convs` append residual blocks to the high branch
    so ablated variants can match the full model's parameter count; they are
    normally set by `make_ablation`, not by hand.
    """

    channels: int = 32
    projection_depth_m: int = 2
    fusion_blocks: int = 2
    angular_size: tuple[int, int] = (5, 5)
    branch_mode: str = "full"
    interaction: bool = True
    use_fp: bool = True
    share_fp_instances: bool = False
    extra_blocks: int = 0
    extra_convs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "angular_size", tuple(self.angular_size))
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.projection_depth_m < 1:
            raise ConfigError(
                f"projection_depth_m must be >= 1, got {self.projection_depth_m}"
            )
        if self.fusion_blocks < 0:
            raise ConfigError(f"fusion_blocks must be >= 0, got {self.fusion_blocks}")
        if len(self.angular_size) != 2 or any(a < 1 for a in self.angular_size):
            raise ConfigError(f"bad angular_size {self.angular_size}")
        if self.branch_mode not in BRANCH_MODES:
            raise ConfigError(
                f"branch_mode must be one of {BRANCH_MODES}, got {self.branch_mode!r}"
            )
        if self.extra_blocks < 0 or self.extra_convs < 0:
            raise ConfigError("extra_blocks/extra_convs must be >= 0")

    @property
    def num_views(self) -> int:
        return self.angular_size[0] * self.angular_size[1]


@dataclass
class FrequencyTriple:
    """Band features; missing bands (ablations) are None."""

    f_high: torch.Tensor
    f_mid: torch.Tensor | None
    f_low: torch.Tensor | None
    enhanced: bool = False

    def bands(self) -> list[torch.Tensor]:
        return [f for f in (self.f_high, self.f_mid, self.f_low) if f is not None]


@dataclass
class ProjectionState:
    """Intermediates of one projection unit, for inspection and tests."""

    lr_feature: torch.Tensor
    hr_feature: torch.Tensor
    residual: torch.Tensor


# ---------------------------------------------------------------------------
# Closed-form parameter counts (asserted in tests, quoted in the README)
# ---------------------------------------------------------------------------


def fusion_block_params(c: int) -> int:
    """Spatial 3x3 + angular 3x3 conv pair: 2 * (9c^2 + c)."""
    return 18 * c * c + 2 * c


def scale_up_params(c: int, fusion_blocks: int) -> int:
    """fusion_blocks blocks + 1x1 projection conv after bilinear x2."""
    return fusion_blocks * fusion_block_params(c) + c * c + c


def scale_down_params(c: int, fusion_blocks: int) -> int:
    """4x4 stride-2 conv + fusion_blocks blocks."""
    return fusion_blocks * fusion_block_params(c) + 16 * c * c + c


def projection_pair_params(c: int, fusion_blocks: int) -> int:
    """One up unit plus one down unit: three scale-ups and three scale-downs."""
    return 3 * (scale_up_params(c, fusion_blocks) + scale_down_params(c, fusion_blocks))


def residual_block_params(c: int) -> int:
    """Per-view conv-lrelu-conv residual block."""
    return 18 * c * c + 2 * c


def trim_conv_params(c: int) -> int:
    """Per-view single-conv residual block, the fine knob for parity."""
    return 9 * c * c + c


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _up2(x: torch.Tensor) -> torch.Tensor:
    """Bilinear x2 on a (B, N, C, H, W) tensor."""
    b, n, c, h, w = x.shape
    flat = x.reshape(b * n, c, h, w)
    up = F.interpolate(flat, scale_factor=2, mode="bilinear", align_corners=False)
    return up.reshape(b, n, c, 2 * h, 2 * w)


class PerViewConv(nn.Module):
    """A conv applied independently to every view."""

    def __init__(self, conv: nn.Module):
        super().__init__()
        self.conv = conv

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c, h, w = x.shape
        out = self.conv(x.reshape(b * n, c, h, w))
        return out.reshape(b, n, *out.shape[1:])


class SpatialAngularBlock(nn.Module):
    """Residual block mixing within views (3x3) then across views (3x3)."""

    def __init__(self, channels: int, angular_size: tuple[int, int]):
        super().__init__()
        self.angular_size = angular_size
        self.spatial = nn.Conv2d(channels, channels, 3, padding=1)
        self.angular = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c, h, w = x.shape
        un, vn = self.angular_size
        s = F.leaky_relu(self.spatial(x.reshape(b * n, c, h, w)), 0.1)
        s = s.reshape(b, un, vn, c, h, w).permute(0, 4, 5, 3, 1, 2)
        a = self.angular(s.reshape(b * h * w, c, un, vn))
        a = a.reshape(b, h, w, c, un, vn).permute(0, 4, 5, 3, 1, 2)
        return x + a.reshape(b, n, c, h, w)


class ScaleUp(nn.Module):
    """Fusion blocks, bilinear x2, then a 1x1 conv."""

    def __init__(self, channels: int, fusion_blocks: int, angular_size):
        super().__init__()
        self.fuse = nn.ModuleList(
            SpatialAngularBlock(channels, angular_size) for _ in range(fusion_blocks)
        )
        self.proj = PerViewConv(nn.Conv2d(channels, channels, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.fuse:
            x = block(x)
        return self.proj(_up2(x))


class ScaleDown(nn.Module):
    """4x4 stride-2 conv, then fusion blocks."""

    def __init__(self, channels: int, fusion_blocks: int, angular_size):
        super().__init__()
        self.proj = PerViewConv(nn.Conv2d(channels, channels, 4, stride=2, padding=1))
        self.fuse = nn.ModuleList(
            SpatialAngularBlock(channels, angular_size) for _ in range(fusion_blocks)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.proj(x)
        for block in self.fuse:
            x = block(x)
        return x


class UpProjection(nn.Module):
    """Lift, re-project, and correct: an up unit of iterative back-projection.

        u   = up1(f)
        e   = down1(u) - f
        out = up2(e) + u
    """

    def __init__(self, channels: int, fusion_blocks: int, angular_size):
        super().__init__()
        self.up1 = ScaleUp(channels, fusion_blocks, angular_size)
        self.down1 = ScaleDown(channels, fusion_blocks, angular_size)
        self.up2 = ScaleUp(channels, fusion_blocks, angular_size)

    def forward(self, f: torch.Tensor) -> ProjectionState:
        u = self.up1(f)
        e = self.down1(u) - f
        return ProjectionState(lr_feature=f, hr_feature=self.up2(e) + u, residual=e)


class DownProjection(nn.Module):
    """Mirror of UpProjection, mapping a lifted feature back down.

        l   = down1(u)
        e   = up1(l) - u
        out = down2(e) + l
    """

    def __init__(self, channels: int, fusion_blocks: int, angular_size):
        super().__init__()
        self.down1 = ScaleDown(channels, fusion_blocks, angular_size)
        self.up1 = ScaleUp(channels, fusion_blocks, angular_size)
        self.down2 = ScaleDown(channels, fusion_blocks, angular_size)

    def forward(self, u: torch.Tensor) -> ProjectionState:
        low = self.down1(u)
        e = self.up1(low) - u
        return ProjectionState(lr_feature=self.down2(e) + low, hr_feature=u, residual=e)


class ProjectionStage(nn.Module):
    """`depth` chained (up, down) projection pairs; resolution preserving."""

    def __init__(self, channels: int, depth: int, fusion_blocks: int, angular_size):
        super().__init__()
        self.ups = nn.ModuleList(
            UpProjection(channels, fusion_blocks, angular_size) for _ in range(depth)
        )
        self.downs = nn.ModuleList(
            DownProjection(channels, fusion_blocks, angular_size) for _ in range(depth)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for up, down in zip(self.ups, self.downs):
            x = down(up(x).hr_feature).lr_feature
        return x

    def forward_with_states(self, x):
        states = []
        for up, down in zip(self.ups, self.downs):
            up_state = up(x)
            down_state = down(up_state.hr_feature)
            states.extend([up_state, down_state])
            x = down_state.lr_feature
        return x, states


class ResidualBlock(nn.Module):
    """Per-view conv-lrelu-conv with a skip; no angular mixing."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c, h, w = x.shape
        flat = x.reshape(b * n, c, h, w)
        out = self.conv2(F.leaky_relu(self.conv1(flat), 0.1))
        return x + out.reshape(b, n, c, h, w)


class ResidualStage(nn.Module):
    """Projection-free stand-in for a stage, used by `use_fp=False`."""

    def __init__(self, channels: int, n_blocks: int):
        super().__init__()
        self.blocks = nn.ModuleList(ResidualBlock(channels) for _ in range(n_blocks))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class TrimConv(nn.Module):
    """Single-conv residual block used to fine-tune parameter parity."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c, h, w = x.shape
        out = self.conv(x.reshape(b * n, c, h, w))
        return x + out.reshape(b, n, c, h, w)


class CompensationStack(nn.Module):
    def __init__(self, channels: int, n_blocks: int, n_convs: int):
        super().__init__()
        self.blocks = nn.ModuleList(ResidualBlock(channels) for _ in range(n_blocks))
        self.trims = nn.ModuleList(TrimConv(channels) for _ in range(n_convs))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        for trim in self.trims:
            x = trim(x)
        return x


# ---------------------------------------------------------------------------
# Network sections
# ---------------------------------------------------------------------------


class FrequencyDecomposition(nn.Module):
    """Strided convolutions plus scale subtraction; bias-free, so homogeneous."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.channels
        self.branch_mode = config.branch_mode
        self.conv_full = nn.Conv2d(1, c, 3, padding=1, bias=False)
        self.conv_half = nn.Conv2d(1, c, 3, stride=2, padding=1, bias=False)
        if config.branch_mode != "high_only":
            self.conv_quarter = nn.Conv2d(c, c, 3, stride=2, padding=1, bias=False)

    def forward(self, x: torch.Tensor) -> FrequencyTriple:
        b, n, c, h, w = x.shape
        if h % 4 or w % 4:
            raise SizeError(f"spatial size {h}x{w} must be divisible by 4")
        flat = x.reshape(b * n, c, h, w)
        full = self.conv_full(flat).reshape(b, n, -1, h, w)
        half = self.conv_half(flat).reshape(b, n, -1, h // 2, w // 2)
        f_high = full - _up2(half)
        if self.branch_mode == "high_only":
            return FrequencyTriple(f_high=f_high, f_mid=None, f_low=None)
        quarter = self.conv_quarter(
            half.reshape(b * n, -1, h // 2, w // 2)
        ).reshape(b, n, -1, h // 4, w // 4)
        f_mid = half - _up2(quarter)
        if self.branch_mode == "mid_high":
            return FrequencyTriple(f_high=f_high, f_mid=f_mid, f_low=None)
        return FrequencyTriple(f_high=f_high, f_mid=f_mid, f_low=quarter)


def _stage_blocks_for_parity(config: ModelConfig) -> int:
    """Residual blocks per replaced stage, sized just under one projection
    stage so the global compensator only ever has to add parameters."""
    stage = config.projection_depth_m * projection_pair_params(
        config.channels, config.fusion_blocks
    )
    return max(1, stage // residual_block_params(config.channels))


class BranchEnhancer(nn.Module):
    """Per-band enhancement stages with coarse-to-fine interaction.

    Wiring (full mode, S are projection stages):

        low  = S_l1(f_low)
        mid  = S_m2(fuse([S_m1(f_mid), up2(low)]))
        high = S_h3(fuse([S_h2(S_h1(f_high)), up2(mid)]))

    Without interaction the fuse convolutions are dropped and each band runs
    its stages independently. `share_fp_instances` reuses stage modules
    positionally across branches instead of creating distinct ones.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.branch_mode = config.branch_mode
        self.interaction = config.interaction
        c = config.channels

        def make_stage():
            if config.use_fp:
                return ProjectionStage(
                    c, config.projection_depth_m, config.fusion_blocks, config.angular_size
                )
            return ResidualStage(c, _stage_blocks_for_parity(config))

        if config.share_fp_instances:
            shared = [make_stage() for _ in range(3)]

            def stage_at(i):
                return shared[i]

        else:

            def stage_at(i):
                return make_stage()

        self.high_stages = nn.ModuleList(stage_at(i) for i in range(3))
        self.mid_stages = (
            nn.ModuleList(stage_at(i) for i in range(2))
            if config.branch_mode != "high_only"
            else None
        )
        self.low_stages = (
            nn.ModuleList([stage_at(0)]) if config.branch_mode == "full" else None
        )
        self.mid_fuse = (
            PerViewConv(nn.Conv2d(2 * c, c, 1))
            if config.interaction and config.branch_mode == "full"
            else None
        )
        self.high_fuse = (
            PerViewConv(nn.Conv2d(2 * c, c, 1))
            if config.interaction and config.branch_mode != "high_only"
            else None
        )

    def forward(self, triple: FrequencyTriple) -> FrequencyTriple:
        low = mid = None
        if self.low_stages is not None:
            low = self.low_stages[0](triple.f_low)
        if self.mid_stages is not None:
            mid = self.mid_stages[0](triple.f_mid)
            if self.mid_fuse is not None:
                mid = self.mid_fuse(torch.cat([mid, _up2(low)], dim=2))
            mid = self.mid_stages[1](mid)
        high = self.high_stages[1](self.high_stages[0](triple.f_high))
        if self.high_fuse is not None:
            high = self.high_fuse(torch.cat([high, _up2(mid)], dim=2))
        high = self.high_stages[2](high)
        return FrequencyTriple(f_high=high, f_mid=mid, f_low=low, enhanced=True)


class Reconstructor(nn.Module):
    """Merge upsampled bands, blend, and add a residual onto the input."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.channels
        n_bands = {"full": 3, "mid_high": 2, "high_only": 1}[config.branch_mode]
        self.merge = PerViewConv(nn.Conv2d(n_bands * c, c, 1))
        self.blend = nn.ModuleList(
            SpatialAngularBlock(c, config.angular_size)
            for _ in range(config.fusion_blocks)
        )
        self.head = PerViewConv(nn.Conv2d(c, 1, 3, padding=1))

    def forward(self, triple: FrequencyTriple, lr: torch.Tensor) -> torch.Tensor:
        if not triple.enhanced:
            raise StateError("reconstruction requires enhanced band features")
        feats = [triple.f_high]
        if triple.f_mid is not None:
            feats.append(_up2(triple.f_mid))
        if triple.f_low is not None:
            feats.append(_up2(_up2(triple.f_low)))
        x = self.merge(torch.cat(feats, dim=2))
        if self.blend:
            y = x
            for block in self.blend:
                y = block(y)
            x = x + y
        return lr + self.head(x)


class OFPNet(nn.Module):
    """The full resolution-preserving super-resolution network."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.decompose = FrequencyDecomposition(config)
        self.enhance = BranchEnhancer(config)
        self.compensate = (
            CompensationStack(config.channels, config.extra_blocks, config.extra_convs)
            if (config.extra_blocks or config.extra_convs)
            else None
        )
        self.reconstruct = Reconstructor(config)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 5:
            raise SizeError(f"expected (B, N, 1, H, W) input, got {tuple(x.shape)}")
        b, n, c, h, w = x.shape
        if c != 1:
            raise SizeError(f"expected single-channel input, got {c} channels")
        if n != self.config.num_views:
            raise SizeError(
                f"input has {n} views, config expects {self.config.num_views}"
            )
        if h % 4 or w % 4:
            raise SizeError(f"spatial size {h}x{w} must be divisible by 4")
        triple = self.decompose(x)
        triple = self.enhance(triple)
        if self.compensate is not None:
            triple.f_high = self.compensate(triple.f_high)
        return self.reconstruct(triple, x)


# ---------------------------------------------------------------------------
# Construction, counting, ablations
# ---------------------------------------------------------------------------


def build_model(config: ModelConfig, seed: int = 0, zero_head: bool = True) -> OFPNet:
    """Seeded construction; by default the output head is zeroed so the
    untrained model is exactly the identity map."""
    torch.manual_seed(seed)
    model = OFPNet(config)
    if zero_head:
        nn.init.zeros_(model.reconstruct.head.conv.weight)
        nn.init.zeros_(model.reconstruct.head.conv.bias)
    return model


def count_params(config: ModelConfig) -> int:
    """Exact learnable-parameter count (shared modules counted once)."""
    model = OFPNet(config)
    return sum(p.numel() for p in model.parameters())


def make_ablation(base: ModelConfig, variant: str) -> ModelConfig:
    """Derive an ablation config matched to the full model's parameter count.

    Variants: freq:h / freq:mh / freq:lmh restrict the decomposition bands;
    proj:none / proj:interact / proj:fp toggle projection stages and branch
    interaction; freq:lmh and proj:full return the base unchanged. Reduced
    variants get compensation blocks appended so their parameter count stays
    within a fraction of a percent of the base.
    """
    if base.branch_mode != "full" or not base.interaction or not base.use_fp:
        raise ConfigError("ablation base must be the full configuration")
    if base.extra_blocks or base.extra_convs:
        raise ConfigError("ablation base must not carry compensation blocks")
    changes: dict = {
        "freq:h": {"branch_mode": "high_only"},
        "freq:mh": {"branch_mode": "mid_high"},
        "freq:lmh": {},
        "proj:none": {"interaction": False, "use_fp": False},
        "proj:interact": {"use_fp": False},
        "proj:fp": {"interaction": False},
        "proj:full": {},
    }.get(variant)
    if changes is None:
        raise ConfigError(
            f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}"
        )
    if not changes:
        return base
    candidate = dataclasses.replace(base, **changes)
    deficit = count_params(base) - count_params(candidate)
    if deficit <= 0:
        return candidate
    block_p = residual_block_params(base.channels)
    trim_p = trim_conv_params(base.channels)
    best = (0, 0)
    best_err = deficit
    for n in range(deficit // block_p + 2):
        for t in range(4):
            err = abs(deficit - n * block_p - t * trim_p)
            if err < best_err:
                best, best_err = (n, t), err
    return dataclasses.replace(candidate, extra_blocks=best[0], extra_convs=best[1])


# ---------------------------------------------------------------------------
# Light field adapters
# ---------------------------------------------------------------------------


def lightfield_to_tensor(lf: LightField) -> torch.Tensor:
    """(U, V, H, W, 1) luma field to a (1, U*V, 1, H, W) tensor."""
    if lf.colorspace is not Colorspace.Y:
        raise ColorspaceError("model input must be a Y field")
    un, vn = lf.angular_size
    h, w = lf.spatial_size
    arr = lf.data.reshape(un * vn, h, w, 1).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr)).unsqueeze(0)


def tensor_to_lightfield(
    t: torch.Tensor, angular_size: tuple[int, int], scale_tag: ScaleTag = ScaleTag.SR
) -> LightField:
    un, vn = angular_size
    arr = t.detach().cpu().numpy()[0]
    h, w = arr.shape[-2:]
    data = arr.transpose(0, 2, 3, 1).reshape(un, vn, h, w, 1)
    return LightField(
        data=np.clip(data, 0.0, 1.0).astype(np.float32),
        colorspace=Colorspace.Y,
        scale_tag=scale_tag,
    )


def super_resolve(model: OFPNet, lf: LightField) -> LightField:
    """Run the model over one luma field; output clamped to [0, 1]."""
    if lf.angular_size != model.config.angular_size:
        raise SizeError(
            f"field angular size {lf.angular_size} != model {model.config.angular_size}"
        )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(lightfield_to_tensor(lf))
    finally:
        model.train(was_training)
    return tensor_to_lightfield(out, lf.angular_size)
