"""Toy-scale ShuffleNet v1/v2 and bottleneck-ResNet models.

Every network takes N×3×H×W images and returns (logits, regs) where regs is
the list of shuffle-regularizer scalars collected from its dynamic modules.
The shuffle strategy is pluggable per model: manual (the fixed reordering),
dynamic (per-sample generated permutations), static (free learned matrices
through the same softmax/binarize pipeline), or off.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, FormatError
from .nn import BatchNorm, Conv2d, Linear, Module, channel_gather
from .permutation import build_manual_shuffle
from .shuffle import (AuxNetConfig, derive_aux_config, derive_expansion_config,
                      dynshuffle_forward, init_aux_state, init_free_state,
                      stacked_identity, static_dynamic_forward, published_aux_config)

SHUFFLE_MODES = ("manual", "dynamic", "static", "off")
EXPANSION_KINDS = ("conv", "duplicate", "static", "dynamic", "static_dynamic")


@dataclass(frozen=True)
class ModelConfig:
    """Stage layout of one network; tiny desk-scale values by default."""

    widths: tuple = (24, 48, 96)
    repeats: tuple = (2, 2, 2)
    classes: int = 10
    groups: int = 3
    stem_channels: int = 12
    final_channels: int = 128        # v2 only (the 1×1 head conv)
    image_hw: int = 32
    width_scale: float = 1.0
    stem_stride: int = 1             # 224-scale nets use stride 2 + max pool
    stem_pool: bool = False
    in_channels: int = 3

    def scaled_widths(self) -> tuple:
        if self.width_scale == 1.0:
            return tuple(self.widths)
        base = max(4, 4 * self.groups)
        return tuple(max(base, int(round(w * self.width_scale / base)) * base)
                     for w in self.widths)


PUBLISHED_CONFIGS: dict[tuple, ModelConfig] = {
    ("v1", "g3"): ModelConfig(widths=(240, 480, 960), repeats=(4, 8, 4), groups=3,
                              stem_channels=24, classes=100,
                              image_hw=224, stem_stride=2, stem_pool=True),
    ("v1", "g8"): ModelConfig(widths=(384, 768, 1536), repeats=(4, 8, 4), groups=8,
                              stem_channels=24, classes=100,
                              image_hw=224, stem_stride=2, stem_pool=True),
    ("v2", "1x"): ModelConfig(widths=(116, 232, 464), repeats=(4, 8, 4), groups=2,
                              stem_channels=24, final_channels=1024, classes=100,
                              image_hw=224, stem_stride=2, stem_pool=True),
    ("v2", "1.5x"): ModelConfig(widths=(176, 352, 704), repeats=(4, 8, 4), groups=2,
                                stem_channels=24, final_channels=1024, classes=100,
                                image_hw=224, stem_stride=2, stem_pool=True),
}


# ---------------------------------------------------------------------------
# shuffle strategies as modules
# ---------------------------------------------------------------------------


class ManualShuffle(Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.perm = build_manual_shuffle(groups, channels)

    def forward(self, x, training=False, binarize_override=None):
        return channel_gather(x, self.perm.map), None


class NoShuffle(Module):
    def forward(self, x, training=False, binarize_override=None):
        return x, None


class DynamicShuffle(Module):
    """Wraps one aux state + config; mode 'static' learns free matrix logits."""

    def __init__(self, cfg: AuxNetConfig, rng, dynamic_input: bool = True,
                 binarize: bool = True):
        super().__init__()
        self.cfg = cfg
        self.binarize = binarize
        self.dynamic_input = dynamic_input
        self.capture = False          # export hook: stash ShuffleOutput on forward
        self.last_output = None
        self.manual_s = build_manual_shuffle(cfg.groups, cfg.clip_target)
        if dynamic_input:
            self.state = init_aux_state(cfg, rng)
            self._params.update(self.state.named_params())
            self.register_buffer("bn_running_mean", self.state.bn_state.running_mean)
            self.register_buffer("bn_running_var", self.state.bn_state.running_var)
            self.register_buffer("m2_prior", self.state.m2_prior)
        else:
            self.state = init_free_state(cfg, rng)
            self._params.update(self.state.named_params())

    def forward(self, x, training=False, binarize_override=None):
        binarize = self.binarize if binarize_override is None else binarize_override
        out, reg, extra = dynshuffle_forward(x, self.state, self.cfg,
                                             training=training, binarize=binarize,
                                             manual_s=self.manual_s,
                                             want_output=self.capture)
        if self.capture:
            self.last_output = extra
        return out, reg

    def export(self, x, training=False, binarize_override=None):
        binarize = self.binarize if binarize_override is None else binarize_override
        return dynshuffle_forward(x, self.state, self.cfg, training=training,
                                  binarize=binarize, manual_s=self.manual_s,
                                  want_output=True)[2]

    def aux_macs(self) -> int:
        return self.cfg.mac_count()

    def aux_params(self) -> int:
        return sum(p.size for p in self._params.values())


def make_shuffle(mode: str, channels: int, groups: int, rng, aux_cfg=None,
                 binarize: bool = True) -> Module:
    if mode not in SHUFFLE_MODES:
        raise ConfigurationError(f"unknown shuffle mode {mode!r}")
    if mode == "manual":
        return ManualShuffle(channels, groups)
    if mode == "off":
        return NoShuffle()
    cfg = aux_cfg if aux_cfg is not None else derive_aux_config(channels, groups)
    return DynamicShuffle(cfg, rng, dynamic_input=(mode == "dynamic"), binarize=binarize)


# ---------------------------------------------------------------------------
# ShuffleNet v1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShuffleUnitConfig:
    c_in: int
    c_out: int
    groups: int
    stride: int
    shuffle_mode: str
    bottleneck_ratio: int = 4
    first_dense: bool = False
    aux: AuxNetConfig | None = None


class ShuffleUnitV1(Module):
    """1×1 gconv → BN/ReLU → shuffle → 3×3 dw → BN → 1×1 gconv → BN, residual."""

    def __init__(self, ucfg: ShuffleUnitConfig, rng, binarize=True):
        super().__init__()
        self.ucfg = ucfg
        b = ucfg.c_out // ucfg.bottleneck_ratio
        if b % ucfg.groups:
            raise ConfigurationError(
                f"bottleneck {b} not divisible by groups {ucfg.groups}")
        branch_out = ucfg.c_out - ucfg.c_in if ucfg.stride == 2 else ucfg.c_out
        if branch_out <= 0:
            raise ConfigurationError(
                f"stride-2 unit needs c_out > c_in, got {ucfg.c_in}->{ucfg.c_out}")
        g1 = 1 if ucfg.first_dense else ucfg.groups
        self.gconv1 = Conv2d(ucfg.c_in, b, 1, rng, groups=g1)
        self.bn1 = BatchNorm(b)
        self.shuffle = make_shuffle(ucfg.shuffle_mode, b, ucfg.groups, rng,
                                    aux_cfg=ucfg.aux, binarize=binarize)
        self.dw = Conv2d(b, b, 3, rng, stride=ucfg.stride, groups=b)
        self.bn2 = BatchNorm(b)
        self.gconv2 = Conv2d(b, branch_out, 1, rng, groups=ucfg.groups)
        self.bn3 = BatchNorm(branch_out)

    def forward(self, x, training=False, binarize_override=None):
        y = ag.relu(self.bn1.forward(self.gconv1.forward(x), training))
        y, reg = self.shuffle.forward(y, training, binarize_override)
        y = self.bn2.forward(self.dw.forward(y), training)
        y = self.bn3.forward(self.gconv2.forward(y), training)
        if self.ucfg.stride == 2:
            pooled = ag.avg_pool2d(x, 3, 2, 1)
            out = ag.relu(ag.concat([pooled, y], axis=1))
        else:
            out = ag.relu(ag.add(x, y))
        return out, reg

    def macs(self, h, w):
        ho, wo = self.dw.out_hw(h, w)
        total = self.gconv1.macs(h, w) + self.dw.macs(h, w) + self.gconv2.macs(ho, wo)
        return total, ho, wo


class ShuffleNetV1(Module):
    def __init__(self, cfg: ModelConfig, mode: str, rng, binarize=True,
                 aux_configs: dict[int, AuxNetConfig] | None = None,
                 full_channel: bool = False):
        super().__init__()
        self.cfg = cfg
        self.mode = mode
        widths = cfg.scaled_widths()
        for wd in widths:
            if (wd // 4) % cfg.groups:
                raise ConfigurationError(
                    f"stage width {wd}: bottleneck {wd // 4} not divisible by g={cfg.groups}")
        self.stem = Conv2d(cfg.in_channels, cfg.stem_channels, 3, rng,
                           stride=cfg.stem_stride)
        self.stem_bn = BatchNorm(cfg.stem_channels)
        units = []
        c_in = cfg.stem_channels
        for si, (wd, reps) in enumerate(zip(widths, cfg.repeats)):
            b = wd // 4
            aux = None
            if mode in ("dynamic", "static"):
                if aux_configs is not None and si in aux_configs:
                    aux = aux_configs[si]
                else:
                    # full channel drops the I_g sharing: one big kron covers b
                    aux = derive_aux_config(b, 1 if full_channel else cfg.groups)
            for r in range(reps):
                ucfg = ShuffleUnitConfig(
                    c_in=c_in, c_out=wd, groups=cfg.groups,
                    stride=2 if r == 0 else 1, shuffle_mode=mode,
                    first_dense=(si == 0 and r == 0), aux=aux)
                units.append(ShuffleUnitV1(ucfg, rng, binarize=binarize))
                c_in = wd
        self.units = units
        self.fc = Linear(widths[-1], cfg.classes, rng, zero_init=True)

    def forward(self, x, training=False, binarize_override=None):
        y = ag.relu(self.stem_bn.forward(self.stem.forward(x), training))
        if self.cfg.stem_pool:
            y = ag.max_pool2d(y, 3, 2, 1)
        regs = []
        for unit in self.units:
            y, reg = unit.forward(y, training, binarize_override)
            if reg is not None:
                regs.append(reg)
        logits = self.fc.forward(ag.global_avg_pool(y))
        return logits, regs

    def count_flops_params(self):
        return count_flops_params(self)


# ---------------------------------------------------------------------------
# ShuffleNet v2
# ---------------------------------------------------------------------------


class ShuffleUnitV2(Module):
    """Split/concat unit; dynamic shuffle acts on the main branch (g=1).

    full_channel moves the dynamic module to the concatenated output,
    replacing the post-concat manual shuffle with a full-width permutation.
    """

    def __init__(self, c_in, c_out, stride, mode, rng, aux=None, binarize=True,
                 full_channel=False):
        super().__init__()
        if c_out % 2:
            raise ConfigurationError(f"v2 width must be even, got {c_out}")
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        half = c_out // 2
        self.half = half
        branch_in = c_in if stride == 2 else c_in // 2
        self.conv1 = Conv2d(branch_in, half, 1, rng)
        self.bn1 = BatchNorm(half)
        self.dw = Conv2d(half, half, 3, rng, stride=stride, groups=half)
        self.bn2 = BatchNorm(half)
        self.conv3 = Conv2d(half, half, 1, rng)
        self.bn3 = BatchNorm(half)
        if stride == 2:
            self.proj_dw = Conv2d(c_in, c_in, 3, rng, stride=2, groups=c_in)
            self.proj_bn1 = BatchNorm(c_in)
            self.proj_conv = Conv2d(c_in, half, 1, rng)
            self.proj_bn2 = BatchNorm(half)
        dynamic = mode in ("dynamic", "static")
        if dynamic and not full_channel:
            cfg = aux if aux is not None else derive_aux_config(half, 1, exact=False)
            self.shuffle = DynamicShuffle(cfg, rng, dynamic_input=(mode == "dynamic"),
                                          binarize=binarize)
        else:
            self.shuffle = NoShuffle()
        if dynamic and full_channel:
            cfg = aux if aux is not None else derive_aux_config(c_out, 1, exact=False)
            self.mix = DynamicShuffle(cfg, rng, dynamic_input=(mode == "dynamic"),
                                      binarize=binarize)
        else:
            self.mix = ManualShuffle(c_out, 2)

    def forward(self, x, training=False, binarize_override=None):
        if self.stride == 1:
            keep = ag.narrow(x, 1, 0, self.c_in // 2)
            y = ag.narrow(x, 1, self.c_in // 2, self.c_in // 2)
        else:
            keep = self.proj_bn2.forward(
                self.proj_conv.forward(self.proj_bn1.forward(self.proj_dw.forward(x), training)),
                training)
            keep = ag.relu(keep)
            y = x
        y = ag.relu(self.bn1.forward(self.conv1.forward(y), training))
        y = self.bn2.forward(self.dw.forward(y), training)
        y = ag.relu(self.bn3.forward(self.conv3.forward(y), training))
        y, reg = self.shuffle.forward(y, training, binarize_override)
        out = ag.concat([keep, y], axis=1)
        out, reg2 = self.mix.forward(out, training, binarize_override)
        if reg is None:
            reg = reg2
        elif reg2 is not None:
            reg = ag.add(reg, reg2)
        return out, reg

    def macs(self, h, w):
        ho, wo = self.dw.out_hw(h, w)
        total = self.conv1.macs(h, w) + self.dw.macs(h, w) + self.conv3.macs(ho, wo)
        if self.stride == 2:
            total += self.proj_dw.macs(h, w) + self.proj_conv.macs(ho, wo)
        return total, ho, wo


class ShuffleNetV2(Module):
    def __init__(self, cfg: ModelConfig, mode: str, rng, binarize=True,
                 aux_configs: dict[int, AuxNetConfig] | None = None,
                 full_channel: bool = False):
        super().__init__()
        self.cfg = cfg
        self.mode = mode
        widths = cfg.scaled_widths()
        self.stem = Conv2d(cfg.in_channels, cfg.stem_channels, 3, rng,
                           stride=cfg.stem_stride)
        self.stem_bn = BatchNorm(cfg.stem_channels)
        units = []
        c_in = cfg.stem_channels
        for si, (wd, reps) in enumerate(zip(widths, cfg.repeats)):
            aux = None
            if mode in ("dynamic", "static"):
                if aux_configs is not None and si in aux_configs:
                    aux = aux_configs[si]
                else:
                    aux = derive_aux_config(wd if full_channel else wd // 2, 1, exact=False)
            for r in range(reps):
                units.append(ShuffleUnitV2(c_in, wd, 2 if r == 0 else 1, mode, rng,
                                           aux=aux, binarize=binarize,
                                           full_channel=full_channel))
                c_in = wd
        self.units = units
        self.head = Conv2d(widths[-1], cfg.final_channels, 1, rng)
        self.head_bn = BatchNorm(cfg.final_channels)
        self.fc = Linear(cfg.final_channels, cfg.classes, rng, zero_init=True)

    def forward(self, x, training=False, binarize_override=None):
        y = ag.relu(self.stem_bn.forward(self.stem.forward(x), training))
        if self.cfg.stem_pool:
            y = ag.max_pool2d(y, 3, 2, 1)
        regs = []
        for unit in self.units:
            y, reg = unit.forward(y, training, binarize_override)
            if reg is not None:
                regs.append(reg)
        y = ag.relu(self.head_bn.forward(self.head.forward(y), training))
        logits = self.fc.forward(ag.global_avg_pool(y))
        return logits, regs

    def count_flops_params(self):
        return count_flops_params(self)


def build_shufflenet(v: int, cfg: ModelConfig, mode: str = "manual", rng=None,
                     binarize: bool = True, full_channel: bool = False,
                     aux_configs: dict[int, AuxNetConfig] | None = None):
    """Forward-capable ShuffleNet with the requested shuffle strategy."""
    if mode not in SHUFFLE_MODES:
        raise ConfigurationError(f"unknown shuffle mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if v == 1:
        return ShuffleNetV1(cfg, mode, rng, binarize=binarize,
                            aux_configs=aux_configs, full_channel=full_channel)
    if v == 2:
        return ShuffleNetV2(cfg, mode, rng, binarize=binarize,
                            aux_configs=aux_configs, full_channel=full_channel)
    raise ConfigurationError(f"unknown ShuffleNet version {v}")


def published_shufflenet(arch: str, variant: str, mode: str = "dynamic", rng=None,
                     classes: int = 100, full_channel: bool = False):
    """Full-scale network wired with the published aux branch dimensions."""
    import dataclasses

    cfg = PUBLISHED_CONFIGS[(arch, variant)]
    if classes != cfg.classes:
        cfg = dataclasses.replace(cfg, classes=classes)
    aux = None
    if mode in ("dynamic", "static") and not full_channel:
        aux = {si: published_aux_config(arch, variant, si + 2) for si in range(3)}
    v = 1 if arch == "v1" else 2
    return build_shufflenet(v, cfg, mode, rng=rng, aux_configs=aux,
                            full_channel=full_channel)


# ---------------------------------------------------------------------------
# bottleneck ResNet with replaceable expansion
# ---------------------------------------------------------------------------


class ShuffleExpansion(Module):
    """Replaces the channel-expanding 1×1 convolution of a bottleneck."""

    def __init__(self, kind: str, c_in: int, c_out: int, rng, binarize=True):
        super().__init__()
        if c_out < c_in:
            raise ConfigurationError(
                f"refusing to replace a reducing conv ({c_in}->{c_out}) with a shuffle")
        self.kind = kind
        self.c_in, self.c_out = c_in, c_out
        self.binarize = binarize
        if kind == "duplicate":
            self.register_buffer("fixed", stacked_identity(c_out, c_in))
            return
        self.cfg = derive_expansion_config(c_in, c_out)
        if kind == "static":
            self.state = init_free_state(self.cfg, rng)
            self._params.update(self.state.named_params())
        else:  # dynamic | static_dynamic
            self.state = init_aux_state(self.cfg, rng)
            self._params.update(self.state.named_params())
            self.register_buffer("bn_running_mean", self.state.bn_state.running_mean)
            self.register_buffer("bn_running_var", self.state.bn_state.running_var)
            self.register_buffer("m2_prior", self.state.m2_prior)
        if kind == "static_dynamic":
            self.static_m = Tensor(stacked_identity(c_out, c_in, gain=0.5),
                                   requires_grad=True)

    def forward(self, x, training=False, binarize_override=None):
        binarize = self.binarize if binarize_override is None else binarize_override
        if self.kind == "duplicate":
            n, c, h, w = x.shape
            flat = ag.reshape(x, (n, c, h * w))
            out = ag.matmul(Tensor(self.fixed), flat)
            return ag.reshape(out, (n, self.c_out, h, w)), None
        static_m = self.static_m if self.kind == "static_dynamic" else None
        out, reg, _ = static_dynamic_forward(x, static_m, self.state, self.cfg,
                                             training=training, binarize=binarize)
        return out, reg

    def aux_macs(self) -> int:
        return 0 if self.kind == "duplicate" else self.cfg.mac_count()

    def aux_params(self) -> int:
        return sum(p.size for p in self._params.values())


class BottleneckBlock(Module):
    def __init__(self, c_in, width, c_out, stride, kind, rng, binarize=True):
        super().__init__()
        self.stride = stride
        self.kind = kind
        self.conv1 = Conv2d(c_in, width, 1, rng)
        self.bn1 = BatchNorm(width)
        self.conv2 = Conv2d(width, width, 3, rng, stride=stride)
        self.bn2 = BatchNorm(width)
        if kind == "conv":
            self.expand = Conv2d(width, c_out, 1, rng)
        else:
            self.expand = ShuffleExpansion(kind, width, c_out, rng, binarize=binarize)
        self.bn3 = BatchNorm(c_out)
        self.has_proj = stride != 1 or c_in != c_out
        if self.has_proj:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride)
            self.proj_bn = BatchNorm(c_out)

    def forward(self, x, training=False, binarize_override=None):
        y = ag.relu(self.bn1.forward(self.conv1.forward(x), training))
        y = ag.relu(self.bn2.forward(self.conv2.forward(y), training))
        reg = None
        if self.kind == "conv":
            y = self.expand.forward(y)
        else:
            y, reg = self.expand.forward(y, training, binarize_override)
        y = self.bn3.forward(y, training)
        short = x
        if self.has_proj:
            short = self.proj_bn.forward(self.proj.forward(x), training)
        return ag.relu(ag.add(y, short)), reg


class BottleneckResNet(Module):
    def __init__(self, kind: str, rng, widths=(16, 32, 64), repeats=(2, 2, 2),
                 expansion=4, classes=10, binarize=True, in_channels=3):
        super().__init__()
        self.kind = kind
        self.stem = Conv2d(in_channels, widths[0], 3, rng)
        self.stem_bn = BatchNorm(widths[0])
        blocks = []
        c_in = widths[0]
        for si, (wd, reps) in enumerate(zip(widths, repeats)):
            c_out = wd * expansion
            for r in range(reps):
                stride = 2 if (si > 0 and r == 0) else 1
                blocks.append(BottleneckBlock(c_in, wd, c_out, stride, kind, rng,
                                              binarize=binarize))
                c_in = c_out
        self.blocks = blocks
        self.fc = Linear(c_in, classes, rng, zero_init=True)

    def forward(self, x, training=False, binarize_override=None):
        y = ag.relu(self.stem_bn.forward(self.stem.forward(x), training))
        regs = []
        for blk in self.blocks:
            y, reg = blk.forward(y, training, binarize_override)
            if reg is not None:
                regs.append(reg)
        logits = self.fc.forward(ag.global_avg_pool(y))
        return logits, regs

    def count_flops_params(self):
        return count_flops_params(self)


def build_resnet_bottleneck_variant(kind: str, rng=None, **kwargs) -> BottleneckResNet:
    if kind not in EXPANSION_KINDS:
        raise ConfigurationError(f"unknown expansion kind {kind!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return BottleneckResNet(kind, rng, **kwargs)


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------


def count_flops_params(model) -> dict:
    """Per-model MAC and parameter totals, with aux networks isolated.

    MACs follow the usual convolution/FC convention (normalizations and
    elementwise ops are free); aux MACs come from the branch dimensions.
    """
    params = sum(p.size for p in model.named_params().values())
    aux_params = 0
    aux_macs = 0
    for m in model.modules():
        if isinstance(m, (DynamicShuffle, ShuffleExpansion)):
            aux_params += m.aux_params()
            aux_macs += m.aux_macs()
    hw = getattr(model.cfg, "image_hw", 32) if hasattr(model, "cfg") else 32
    macs = 0
    h = w = hw
    if isinstance(model, (ShuffleNetV1, ShuffleNetV2)):
        macs += model.stem.macs(h, w)
        h, w = model.stem.out_hw(h, w)
        if model.cfg.stem_pool:
            h, w = (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
        for unit in model.units:
            m, h, w = unit.macs(h, w)
            macs += m
        if isinstance(model, ShuffleNetV2):
            macs += model.head.macs(h, w)
        macs += model.fc.macs()
    elif isinstance(model, BottleneckResNet):
        macs += model.stem.macs(h, w)
        h, w = model.stem.out_hw(h, w)
        for blk in model.blocks:
            macs += blk.conv1.macs(h, w)
            macs += blk.conv2.macs(h, w)
            ho, wo = blk.conv2.out_hw(h, w)
            if blk.kind == "conv":
                macs += blk.expand.macs(ho, wo)
            if blk.has_proj:
                macs += blk.proj.macs(h, w)
            h, w = ho, wo
        macs += model.fc.macs()
    macs += aux_macs
    return {"macs": macs, "params": params, "aux_macs": aux_macs, "aux_params": aux_params}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MANIFEST_SUFFIX = ".manifest.txt"


def save_checkpoint(path: str, model, extra: dict | None = None):
    """Flat binary records: u32 name length, name bytes, u32 rank, u32 extents,
    float32 payload — little endian throughout — plus a text manifest."""
    records = {}
    records.update({k: v.data for k, v in model.named_params().items()})
    records.update({"buffer." + k: v for k, v in model.named_buffers().items()})
    with open(path, "wb") as fh:
        for name, arr in records.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=np.float32).tobytes())
    with open(path + _MANIFEST_SUFFIX, "w") as fh:
        for key, val in sorted((extra or {}).items()):
            fh.write(f"# {key} = {val}\n")
        for name, arr in records.items():
            fh.write(f"{name} {'x'.join(map(str, arr.shape)) or 'scalar'}\n")


def load_checkpoint(path: str, model):
    """Restore parameters and buffers; any mismatch is a format error."""
    wanted = {k: v for k, v in model.named_params().items()}
    buffers = model.named_buffers()
    seen = set()

    def take(fh, n, what):
        blob = fh.read(n)
        if len(blob) != n:
            raise FormatError(f"{path}: truncated {what}")
        return blob

    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError(f"{path}: truncated record header")
            (nlen,) = struct.unpack("<I", head)
            try:
                name = take(fh, nlen, "record name").decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError(f"{path}: record name is not UTF-8")
            (rank,) = struct.unpack("<I", take(fh, 4, f"rank of {name!r}"))
            if rank > 8:
                raise FormatError(f"{path}: implausible rank {rank} for {name!r}")
            shape = struct.unpack(f"<{rank}I", take(fh, 4 * rank, f"shape of {name!r}"))
            count = int(np.prod(shape)) if rank else 1
            payload = take(fh, 4 * count, f"payload for {name!r}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            if name.startswith("buffer."):
                bname = name[len("buffer."):]
                if bname not in buffers:
                    raise FormatError(f"{path}: unknown buffer {bname!r}")
                if buffers[bname].shape != arr.shape:
                    raise FormatError(f"{path}: buffer {bname!r} shape {arr.shape} "
                                      f"!= model {buffers[bname].shape}")
                model.set_buffer(bname, arr)
            else:
                if name not in wanted:
                    raise FormatError(f"{path}: unknown parameter {name!r}")
                if wanted[name].shape != tuple(shape):
                    raise FormatError(f"{path}: parameter {name!r} shape {shape} "
                                      f"!= model {wanted[name].shape}")
                wanted[name].data = arr.astype(np.float32).copy()
            seen.add(name)
    missing = set(wanted) - seen
    if missing:
        raise FormatError(f"{path}: missing parameters {sorted(missing)[:4]}...")


def read_manifest(path: str) -> dict:
    meta = {}
    with open(path + _MANIFEST_SUFFIX) as fh:
        for line in fh:
            if line.startswith("# ") and " = " in line:
                key, val = line[2:].strip().split(" = ", 1)
                meta[key] = val
    return meta
