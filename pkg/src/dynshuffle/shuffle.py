"""Data-dependent channel shuffle.

A tiny two-branch auxiliary network maps the pooled feature vector of a layer
to two small row-stochastic matrices. Each is binarized per row (straight
through), composed by Kronecker product, shared across channel groups with
I_g ⊗ ·, mixed across groups by the fixed ShuffleNet reordering, and the
resulting per-sample permutation reorders the layer's channels. Orthogonality
(square) or unit-row-norm (rectangular) penalties on the soft matrices drive
them toward exact permutations during training.

Two equivalent realizations of the composition exist: a gradient-carrying one
built from kron/narrow/row-gather primitives (used whenever a tape is active,
or when binarization is disabled and the matrices are genuinely dense), and a
pure index-arithmetic fast path (used for inference). They produce bitwise
identical outputs because permutation entries are exact ones and zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, binarize_ste
from .errors import ConfigurationError, DimensionError, UsageError
from .permutation import PermutationMatrix, build_manual_shuffle


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuxNetConfig:
    """Branch dimensions of one dynamic shuffle module.

    Branch 1 (coarse): MLP channels → mlp1_hidden → m1_size².
    Branch 2 (fine):   MLP channels → mlp2_hidden → mlp2_out, then Conv1D
    (1 → conv_channels, kernel/stride/pad below) and BN; the conv output
    (conv_channels × length) is read as the m2_rows × m2_cols matrix.
    """

    channels: int
    groups: int
    m1_size: int
    m2_rows: int
    m2_cols: int
    mlp1_hidden: int
    mlp2_hidden: int
    mlp2_out: int
    conv_kernel: int
    conv_channels: int
    conv_stride: int
    conv_pad: int
    clip_target: int = 0          # composed matrix is clipped to this many rows (0 → channels)
    target_cols: int = 0          # column target; differs from rows only for expansion
    ambiguous: bool = False       # reshape of branch 2 not uniquely pinned upstream

    def __post_init__(self):
        if self.clip_target == 0:
            object.__setattr__(self, "clip_target", self.channels)
        if self.target_cols == 0:
            object.__setattr__(self, "target_cols", self.clip_target)
        self.validate()

    @property
    def conv_out_len(self) -> int:
        return (self.mlp2_out + 2 * self.conv_pad - self.conv_kernel) // self.conv_stride + 1

    @property
    def block_rows(self) -> int:
        return self.m1_size * self.m2_rows

    @property
    def block_cols(self) -> int:
        return self.m1_size * self.m2_cols

    @property
    def composed_rows(self) -> int:
        return self.groups * self.block_rows

    @property
    def composed_cols(self) -> int:
        return self.groups * self.block_cols

    @property
    def needs_clip(self) -> bool:
        return (self.composed_rows, self.composed_cols) != (self.clip_target, self.target_cols)

    def validate(self):
        if self.conv_kernel > self.mlp2_out + 2 * self.conv_pad:
            raise ConfigurationError(
                f"conv kernel {self.conv_kernel} exceeds padded length "
                f"{self.mlp2_out + 2 * self.conv_pad}")
        got = self.conv_channels * self.conv_out_len
        want = self.m2_rows * self.m2_cols
        if got != want:
            raise ConfigurationError(
                f"branch 2 emits {self.conv_channels}x{self.conv_out_len}={got} entries, "
                f"matrix needs {self.m2_rows}x{self.m2_cols}={want}")
        if self.composed_rows < self.clip_target or self.composed_cols < self.target_cols:
            raise ConfigurationError(
                f"composed {self.composed_rows}x{self.composed_cols} cannot cover "
                f"{self.clip_target}x{self.target_cols}")

    def mac_count(self) -> int:
        """Multiply-accumulates of one aux forward pass (single sample)."""
        mlp1 = self.channels * self.mlp1_hidden + self.mlp1_hidden * self.m1_size ** 2
        mlp2 = self.channels * self.mlp2_hidden + self.mlp2_hidden * self.mlp2_out
        conv = self.conv_kernel * self.conv_channels * self.conv_out_len
        return mlp1 + mlp2 + conv

    def param_count(self) -> int:
        mlp1 = (self.channels + 1) * self.mlp1_hidden + (self.mlp1_hidden + 1) * self.m1_size ** 2
        mlp2 = (self.channels + 1) * self.mlp2_hidden + (self.mlp2_hidden + 1) * self.mlp2_out
        conv = self.conv_kernel * self.conv_channels
        bn = 2 * self.conv_channels
        return mlp1 + mlp2 + conv + bn


@dataclass
class AuxNetState:
    """Learnable parameters of one dynamic shuffle module.

    m2_prior is a constant (non-learnable) logit offset on branch 2. The
    published branch ends in Conv1D+BN, whose per-channel offset cannot
    prefer one matrix column over another, so the near-identity start lives
    here; branch 1 gets the same effect through plain bias initialization.
    """

    w1a: Tensor
    b1a: Tensor
    w1b: Tensor
    b1b: Tensor
    w2a: Tensor
    b2a: Tensor
    w2b: Tensor
    b2b: Tensor
    conv_w: Tensor
    bn_scale: Tensor
    bn_offset: Tensor
    bn_state: ag.BatchNormState
    m2_prior: np.ndarray

    def named_params(self, prefix: str = ""):
        names = ("w1a", "b1a", "w1b", "b1b", "w2a", "b2a", "w2b", "b2b",
                 "conv_w", "bn_scale", "bn_offset")
        return {prefix + n: getattr(self, n) for n in names}


@dataclass
class FreeMatrixState:
    """Batch-shared matrix logits for the no-dynamic-input ablation."""

    m1_logits: Tensor
    m2_logits: Tensor

    def named_params(self, prefix: str = ""):
        return {prefix + "m1_logits": self.m1_logits, prefix + "m2_logits": self.m2_logits}


@dataclass
class ShuffleOutput:
    """Intermediate matrices of one forward pass (first axis = sample)."""

    m1_soft: np.ndarray
    m2_soft: np.ndarray
    m1_bin: np.ndarray
    m2_bin: np.ndarray
    composed: np.ndarray
    reg_value: float


PRIOR_GAIN = 1.0        # logit head start of the initial permutation pattern
_HEAD_STD = 0.01        # branch output layers start almost silent
_BN_SCALE0 = 0.1        # keeps the normalized conv noise well under the prior


def _pattern_logits(rows: int, cols: int, perm: np.ndarray | None) -> np.ndarray:
    """κ at one column per row: a permutation pattern (identity by default)."""
    cols_of = np.arange(rows) % cols if perm is None else np.asarray(perm)
    out = np.zeros((rows, cols), dtype=np.float32)
    out[np.arange(rows), cols_of] = PRIOR_GAIN
    return out


def init_aux_state(cfg: AuxNetConfig, rng: np.random.Generator,
                   m1_pattern: np.ndarray | None = None,
                   m2_pattern: np.ndarray | None = None) -> AuxNetState:
    """Random state whose branches start at a fixed permutation pattern.

    The default pattern is the identity, so a fresh dynamic shuffle composes
    to exactly the manual ShuffleNet reordering; training moves it from there.
    The optional patterns let tests draw arbitrary permutation starts.
    """

    def w(shape, fan_in, std=None):
        s = math.sqrt(2.0 / fan_in) if std is None else std
        return Tensor(rng.normal(0.0, s, shape).astype(np.float32), requires_grad=True)

    def z(shape):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    c, h1, h2 = cfg.channels, cfg.mlp1_hidden, cfg.mlp2_hidden
    return AuxNetState(
        w1a=w((c, h1), c), b1a=z(h1),
        w1b=w((h1, cfg.m1_size ** 2), h1, std=_HEAD_STD),
        b1b=Tensor(_pattern_logits(cfg.m1_size, cfg.m1_size, m1_pattern).reshape(-1),
                   requires_grad=True),
        w2a=w((c, h2), c), b2a=z(h2),
        w2b=w((h2, cfg.mlp2_out), h2, std=_HEAD_STD), b2b=z(cfg.mlp2_out),
        conv_w=w((cfg.conv_channels, 1, cfg.conv_kernel), cfg.conv_kernel),
        bn_scale=Tensor(np.full(cfg.conv_channels, _BN_SCALE0, dtype=np.float32),
                        requires_grad=True),
        bn_offset=z(cfg.conv_channels),
        bn_state=ag.BatchNormState(cfg.conv_channels),
        m2_prior=_pattern_logits(cfg.m2_rows, cfg.m2_cols, m2_pattern),
    )


def init_free_state(cfg: AuxNetConfig, rng: np.random.Generator) -> FreeMatrixState:
    def logits(rows, cols):
        base = _pattern_logits(rows, cols, None)
        return Tensor(base + rng.normal(0.0, 0.1, base.shape).astype(np.float32),
                      requires_grad=True)

    return FreeMatrixState(m1_logits=logits(cfg.m1_size, cfg.m1_size),
                           m2_logits=logits(cfg.m2_rows, cfg.m2_cols))


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def aux_forward(pooled: Tensor, state: AuxNetState, cfg: AuxNetConfig,
                training: bool = False):
    """Pooled features → the two row-stochastic branch matrices (per sample)."""
    if pooled.ndim != 2 or pooled.shape[1] != cfg.channels:
        raise ConfigurationError(
            f"pooled input {pooled.shape} does not match channels={cfg.channels}")
    n = pooled.shape[0]

    hid1 = ag.relu(ag.affine(pooled, state.w1a, state.b1a))
    logits1 = ag.affine(hid1, state.w1b, state.b1b)
    m1 = ag.row_softmax(ag.reshape(logits1, (n, cfg.m1_size, cfg.m1_size)))

    hid2 = ag.relu(ag.affine(pooled, state.w2a, state.b2a))
    vec = ag.affine(hid2, state.w2b, state.b2b)
    seq = ag.reshape(vec, (n, 1, cfg.mlp2_out))
    feat = ag.conv1d(seq, state.conv_w, stride=cfg.conv_stride, pad=cfg.conv_pad)
    feat = ag.batchnorm(feat, state.bn_scale, state.bn_offset, state.bn_state, training)
    logits2 = ag.add(ag.reshape(feat, (n, cfg.m2_rows, cfg.m2_cols)),
                     Tensor(state.m2_prior))
    m2 = ag.row_softmax(logits2)
    return m1, m2


def _mT(m: Tensor) -> Tensor:
    axes = list(range(m.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ag.transpose(m, axes)


def orth_reg(m: Tensor) -> Tensor:
    """Frobenius norm of M̂M̂ᵀ − I; zero exactly on orthogonal matrices."""
    if m.shape[-1] != m.shape[-2]:
        raise UsageError(f"orth_reg needs a square matrix, got {m.shape}; use rect_reg")
    r = m.shape[-1]
    gram = ag.matmul(m, _mT(m))
    diff = ag.sub(gram, Tensor(np.eye(r, dtype=np.float32)))
    return ag.sqrt(ag.sum_axis(ag.mul(diff, diff), axis=(-2, -1)))


def rect_reg(m: Tensor) -> Tensor:
    """sqrt of Σ_j (‖row_j‖₂ − 1)²; zero exactly when every row is one-hot."""
    norms = ag.sqrt(ag.sum_axis(ag.mul(m, m), axis=-1))
    d = ag.sub(norms, Tensor(np.float32(1.0)))
    return ag.sqrt(ag.sum_axis(ag.mul(d, d), axis=-1))


def _matrix_reg(m: Tensor) -> Tensor:
    return orth_reg(m) if m.shape[-1] == m.shape[-2] else rect_reg(m)


def _batch_mean(v: Tensor) -> Tensor:
    return ag.mean_all(v) if v.ndim else v


# ---------------------------------------------------------------------------
# composition: index arithmetic (inference) and taped (training)
# ---------------------------------------------------------------------------


def _selector_src(m1_bin: np.ndarray, m2_bin: np.ndarray, cfg: AuxNetConfig,
                  s_map: np.ndarray, soft_block: np.ndarray | None):
    """Source-channel indices of the final row-one-hot matrix.

    Works on unbatched (r, c) or batched (n, r, c) binary matrices and mirrors
    the taped composition exactly (same clip and repair rule).
    """
    cols1 = m1_bin.argmax(axis=-1)
    cols2 = m2_bin.argmax(axis=-1)
    q = m2_bin.shape[-1]
    batch = cols1.shape[:-1]
    src_k = (cols1[..., :, None] * q + cols2[..., None, :]).reshape(batch + (cfg.block_rows,))

    offsets = (np.arange(cfg.groups) * cfg.block_cols)[:, None]
    src_share = (src_k[..., None, :] + offsets).reshape(batch + (cfg.composed_rows,))

    src = src_share[..., :cfg.clip_target]
    lost = src >= cfg.target_cols
    if lost.any():
        if soft_block is None:
            raise UsageError("clipping requires the soft product for row repair")
        repair = np.empty_like(src)
        for g0 in range(cfg.groups):
            lo = g0 * cfg.block_rows
            hi = min((g0 + 1) * cfg.block_rows, cfg.clip_target)
            if lo >= hi:
                break
            valid = min(cfg.block_cols, cfg.target_cols - g0 * cfg.block_cols)
            if valid <= 0:
                repair[..., lo:hi] = 0
                continue
            block = soft_block[..., lo - g0 * cfg.block_rows:hi - g0 * cfg.block_rows, :valid] \
                if soft_block.shape[-2] == cfg.block_rows else soft_block[..., lo:hi, :valid]
            repair[..., lo:hi] = block.argmax(axis=-1) + g0 * cfg.block_cols
        src = np.where(lost, repair, src)
    return np.take(src, s_map, axis=-1)


def compose(m1_bin, m2_bin, groups: int, manual_s: PermutationMatrix, clip_target: int,
            m_soft_product=None) -> np.ndarray:
    """Dense binary clip_target×clip_target matrix S·clip(I_g ⊗ (M1 ⊗ M2)).

    Pure index arithmetic and memory duplication; no float products. The soft
    Kronecker product is consulted only to repair rows whose 1 was clipped.
    """
    m1 = np.asarray(getattr(m1_bin, "data", m1_bin))
    m2 = np.asarray(getattr(m2_bin, "data", m2_bin))
    if m1.ndim != 2 or m2.ndim != 2:
        raise DimensionError(f"compose expects matrices, got {m1.shape} and {m2.shape}")
    r1, c1 = m1.shape
    r2, c2 = m2.shape
    if groups * r1 * r2 < clip_target:
        raise ConfigurationError(
            f"{groups} groups of {r1}x{r2} blocks cover only {groups * r1 * r2} "
            f"of {clip_target} channels")
    if manual_s.size != clip_target:
        raise DimensionError(f"manual shuffle size {manual_s.size} != target {clip_target}")
    cfg = _composition_geometry(r1, c1, r2, c2, groups, clip_target)
    soft = None
    if m_soft_product is not None:
        soft = np.asarray(getattr(m_soft_product, "data", m_soft_product))
    src = _selector_src(m1, m2, cfg, manual_s.map, soft)
    out = np.zeros((clip_target, cfg.target_cols), dtype=np.float32)
    out[np.arange(clip_target), src] = 1.0
    return out


class _Geometry:
    """Just the block sizes the composition helpers need."""

    __slots__ = ("block_rows", "block_cols", "groups", "clip_target",
                 "target_cols", "composed_rows")

    def __init__(self, r1, c1, r2, c2, groups, clip_target, target_cols=None):
        self.block_rows = r1 * r2
        self.block_cols = c1 * c2
        self.groups = groups
        self.clip_target = clip_target
        self.target_cols = clip_target if target_cols is None else target_cols
        self.composed_rows = groups * self.block_rows


def _composition_geometry(r1, c1, r2, c2, groups, clip_target, target_cols=None):
    return _Geometry(r1, c1, r2, c2, groups, clip_target, target_cols)


def _taped_matrix(m1b: Tensor, m2b: Tensor, cfg, s_map: np.ndarray,
                  soft_block: np.ndarray | None) -> Tensor:
    """Gradient-carrying version of compose; identical selection rule."""
    k = ag.kron_batched(m1b, m2b)
    if cfg.groups > 1:
        k = ag.kron_batched(Tensor(np.eye(cfg.groups, dtype=np.float32)), k)
    rows = k.shape[-2]
    cols = k.shape[-1]
    if rows != cfg.clip_target or cols != cfg.target_cols:
        k = ag.narrow(k, k.ndim - 2, 0, cfg.clip_target)
        k = ag.narrow(k, k.ndim - 1, 0, cfg.target_cols)
        lost = k.data.sum(axis=-1) == 0
        if lost.any():
            if soft_block is None:
                raise UsageError("clipping requires the soft product for row repair")
            geo = _composition_geometry(1, 1, cfg.block_rows, cfg.block_cols,
                                        cfg.groups, cfg.clip_target, cfg.target_cols)
            filler = np.zeros(k.shape, dtype=np.float32)
            src = _repair_columns(lost, soft_block, geo)
            idx = np.nonzero(lost)
            filler[idx + (src[idx],)] = 1.0
            k = ag.add(k, Tensor(filler))
    if s_map is not None:
        k = ag.gather_rows(k, s_map)
    return k


def _repair_columns(lost: np.ndarray, soft_block: np.ndarray, geo) -> np.ndarray:
    repair = np.zeros(lost.shape, dtype=np.int64)
    for g0 in range(geo.groups):
        lo = g0 * geo.block_rows
        hi = min((g0 + 1) * geo.block_rows, geo.clip_target)
        if lo >= hi:
            break
        valid = min(geo.block_cols, geo.target_cols - g0 * geo.block_cols)
        if valid <= 0:
            continue
        block = soft_block[..., lo - g0 * geo.block_rows:hi - g0 * geo.block_rows, :valid] \
            if soft_block.shape[-2] == geo.block_rows else soft_block[..., lo:hi, :valid]
        repair[..., lo:hi] = block.argmax(axis=-1) + g0 * geo.block_cols
    return repair


# ---------------------------------------------------------------------------
# module forwards
# ---------------------------------------------------------------------------


def _branch_matrices(f_or_pooled, state, cfg, training):
    if isinstance(state, FreeMatrixState):
        m1 = ag.row_softmax(state.m1_logits)
        m2 = ag.row_softmax(state.m2_logits)
        return m1, m2
    return aux_forward(f_or_pooled, state, cfg, training=training)


def dynshuffle_forward(f: Tensor, state, cfg: AuxNetConfig, *, training: bool = False,
                       binarize: bool = True, want_output: bool = False,
                       manual_s: PermutationMatrix | None = None):
    """Shuffle f's channels with per-sample generated permutations.

    Returns (shuffled features, reg value, ShuffleOutput | None). The reg
    value is the batch mean of R(M̂¹)+R(M̂²) on the soft matrices.
    """
    if f.ndim != 4:
        raise DimensionError(f"expected N×C×H×W features, got {f.shape}")
    n, c, h, w = f.shape
    if c != cfg.channels or cfg.clip_target != c or cfg.target_cols != c:
        raise DimensionError(f"feature channels {c} do not match config ({cfg.channels})")
    if manual_s is None:
        manual_s = build_manual_shuffle(cfg.groups, cfg.clip_target)

    pooled = ag.global_avg_pool(f)
    m1_soft, m2_soft = _branch_matrices(pooled, state, cfg, training)
    reg = _batch_mean(ag.add(_matrix_reg(m1_soft), _matrix_reg(m2_soft)))

    if binarize:
        m1b = binarize_ste(m1_soft)
        m2b = binarize_ste(m2_soft)
    else:
        m1b, m2b = m1_soft, m2_soft

    soft_block = None
    if cfg.needs_clip:
        soft_block = ag.kron_batched(m1_soft, m2_soft).data

    taped = ag.active_tape() is not None
    f_flat = ag.reshape(f, (n, c, h * w))
    if taped or not binarize:
        matrix = _taped_matrix(m1b, m2b, cfg, manual_s.map, soft_block)
        out_flat = ag.matmul(matrix, f_flat)
        composed = matrix.data
    else:
        src = _selector_src(m1b.data, m2b.data, cfg, manual_s.map, soft_block)
        if src.ndim == 1:
            shuffled = f.data[:, src]
        else:
            shuffled = np.take_along_axis(f.data.reshape(n, c, h * w),
                                          src[:, :, None], axis=1)
        out_flat = Tensor(np.ascontiguousarray(shuffled.reshape(n, c, h * w)))
        composed = None

    out = ag.reshape(out_flat, (n, c, h, w))
    extra = None
    if want_output:
        if composed is None:
            composed = _dense_from_src(src, c, n if src.ndim > 1 else None)
        if composed.ndim == 2:
            composed = np.broadcast_to(composed, (n, c, c)).copy()
        extra = ShuffleOutput(m1_soft.data, m2_soft.data, m1b.data, m2b.data,
                              np.asarray(composed), float(reg.data))
    return out, reg, extra


def _dense_from_src(src: np.ndarray, c: int, n) -> np.ndarray:
    if n is None:
        out = np.zeros((c, c), dtype=np.float32)
        out[np.arange(c), src] = 1.0
        return out
    out = np.zeros((src.shape[0], c, c), dtype=np.float32)
    rows = np.broadcast_to(np.arange(c), src.shape)
    batch = np.broadcast_to(np.arange(src.shape[0])[:, None], src.shape)
    out[batch, rows, src] = 1.0
    return out


def static_dynamic_forward(f: Tensor, static_m: Tensor | None, state, cfg: AuxNetConfig,
                           *, training: bool = False, binarize: bool = True,
                           want_output: bool = False):
    """Channel expansion by static_m + binarized dynamic rectangle.

    The dynamic part is the Kronecker product of the two branch matrices,
    narrowed to rows×cols = target; reg is the unit-row-norm penalty of the
    narrowed soft rectangle. Only expansion is allowed (rows ≥ cols).
    """
    if f.ndim != 4:
        raise DimensionError(f"expected N×C×H×W features, got {f.shape}")
    n, c, h, w = f.shape
    c_out, c_in = cfg.clip_target, cfg.target_cols
    if c_out < c_in:
        raise ConfigurationError(f"shuffle expansion cannot reduce channels ({c_out}<{c_in})")
    if c != c_in:
        raise DimensionError(f"feature channels {c} != config input width {c_in}")
    if static_m is not None and tuple(static_m.shape) != (c_out, c_in):
        raise DimensionError(f"static matrix {static_m.shape} != ({c_out}, {c_in})")

    pooled = ag.global_avg_pool(f)
    m1_soft, m2_soft = _branch_matrices(pooled, state, cfg, training)

    soft_rect = ag.kron_batched(m1_soft, m2_soft)
    if soft_rect.shape[-2] != c_out or soft_rect.shape[-1] != c_in:
        soft_rect = ag.narrow(soft_rect, soft_rect.ndim - 2, 0, c_out)
        soft_rect = ag.narrow(soft_rect, soft_rect.ndim - 1, 0, c_in)
    reg = _batch_mean(rect_reg(soft_rect))

    if binarize:
        m1b = binarize_ste(m1_soft)
        m2b = binarize_ste(m2_soft)
    else:
        m1b, m2b = m1_soft, m2_soft
    dyn = _taped_matrix(m1b, m2b, _rect_cfg(cfg, c_out, c_in), None, soft_rect.data)

    m_eff = ag.add(static_m, dyn) if static_m is not None else dyn
    out_flat = ag.matmul(m_eff, ag.reshape(f, (n, c, h * w)))
    out = ag.reshape(out_flat, (n, c_out, h, w))
    extra = None
    if want_output:
        comp = dyn.data
        if comp.ndim == 2:
            comp = np.broadcast_to(comp, (n, c_out, c_in)).copy()
        extra = ShuffleOutput(m1_soft.data, m2_soft.data, m1b.data, m2b.data,
                              np.asarray(comp), float(reg.data))
    return out, reg, extra


def _rect_cfg(cfg: AuxNetConfig, rows: int, cols: int):
    return _composition_geometry(cfg.m1_size, cfg.m1_size, cfg.m2_rows, cfg.m2_cols,
                                 cfg.groups, rows, cols)


def stacked_identity(c_out: int, c_in: int, gain: float = 1.0) -> np.ndarray:
    """Duplication expansion: ⌈c_out/c_in⌉ identity blocks stacked and cropped."""
    reps = -(-c_out // c_in)
    return (np.tile(np.eye(c_in, dtype=np.float32), (reps, 1))[:c_out] * gain)


# ---------------------------------------------------------------------------
# published architectures and desk-scale derivations
# ---------------------------------------------------------------------------

# (arch, variant, stage) → published aux branch dims for the full-scale models.
PUBLISHED_AUX: dict[tuple, AuxNetConfig] = {}


def _pub(arch, variant, stage, **kw):
    PUBLISHED_AUX[(arch, variant, stage)] = AuxNetConfig(**kw)


_pub("v1", "g3", 2, channels=60, groups=3, m1_size=4, m2_rows=5, m2_cols=5,
    mlp1_hidden=5, mlp2_hidden=5, mlp2_out=20,
    conv_kernel=6, conv_channels=5, conv_stride=4, conv_pad=1)
_pub("v1", "g3", 3, channels=120, groups=3, m1_size=5, m2_rows=8, m2_cols=8,
    mlp1_hidden=10, mlp2_hidden=10, mlp2_out=40,
    conv_kernel=13, conv_channels=8, conv_stride=5, conv_pad=4)
_pub("v1", "g3", 4, channels=240, groups=3, m1_size=4, m2_rows=20, m2_cols=20,
    mlp1_hidden=20, mlp2_hidden=20, mlp2_out=80,
    conv_kernel=26, conv_channels=20, conv_stride=4, conv_pad=11)

_pub("v1", "g8", 2, channels=96, groups=8, m1_size=4, m2_rows=3, m2_cols=3,
    mlp1_hidden=3, mlp2_hidden=3, mlp2_out=12,
    conv_kernel=4, conv_channels=3, conv_stride=4, conv_pad=0)
_pub("v1", "g8", 3, channels=192, groups=8, m1_size=4, m2_rows=6, m2_cols=6,
    mlp1_hidden=6, mlp2_hidden=6, mlp2_out=24,
    conv_kernel=8, conv_channels=6, conv_stride=4, conv_pad=2)
_pub("v1", "g8", 4, channels=384, groups=8, m1_size=4, m2_rows=12, m2_cols=12,
    mlp1_hidden=12, mlp2_hidden=12, mlp2_out=48,
    conv_kernel=16, conv_channels=12, conv_stride=4, conv_pad=6)

_pub("v2", "1x", 2, channels=58, groups=1, m1_size=6, m2_rows=10, m2_cols=10,
    mlp1_hidden=3, mlp2_hidden=7, mlp2_out=60,
    conv_kernel=20, conv_channels=10, conv_stride=6, conv_pad=7)
_pub("v2", "1x", 3, channels=116, groups=1, m1_size=6, m2_rows=20, m2_cols=20,
    mlp1_hidden=7, mlp2_hidden=15, mlp2_out=120,
    conv_kernel=40, conv_channels=20, conv_stride=6, conv_pad=17)
_pub("v2", "1x", 4, channels=232, groups=1, m1_size=6, m2_rows=40, m2_cols=45,
    mlp1_hidden=14, mlp2_hidden=29, mlp2_out=234,
    conv_kernel=39, conv_channels=40, conv_stride=6, conv_pad=36, ambiguous=True)

_pub("v2", "1.5x", 2, channels=88, groups=1, m1_size=9, m2_rows=10, m2_cols=10,
    mlp1_hidden=5, mlp2_hidden=11, mlp2_out=90,
    conv_kernel=30, conv_channels=10, conv_stride=9, conv_pad=11)
_pub("v2", "1.5x", 3, channels=176, groups=1, m1_size=9, m2_rows=20, m2_cols=20,
    mlp1_hidden=11, mlp2_hidden=22, mlp2_out=180,
    conv_kernel=60, conv_channels=20, conv_stride=9, conv_pad=26)
_pub("v2", "1.5x", 4, channels=352, groups=1, m1_size=9, m2_rows=40, m2_cols=40,
    mlp1_hidden=22, mlp2_hidden=45, mlp2_out=360,
    conv_kernel=120, conv_channels=40, conv_stride=9, conv_pad=56)


def published_aux_config(arch: str, variant: str, stage: int) -> AuxNetConfig:
    try:
        return PUBLISHED_AUX[(arch, variant, stage)]
    except KeyError:
        raise ConfigurationError(f"no published aux config for {arch}/{variant} stage {stage}")


def _largest_divisor_at_most_sqrt(q: int) -> int:
    best = 1
    for d in range(1, int(math.isqrt(q)) + 1):
        if q % d == 0:
            best = d
    return best


def _tiny_conv(r2: int):
    """k=3, s=2, p=1 Conv1D emitting r2 channels × r2 positions from 2·r2−1."""
    return dict(mlp2_out=2 * r2 - 1, conv_kernel=3, conv_channels=r2,
                conv_stride=2, conv_pad=1)


def derive_aux_config(channels: int, groups: int, *, exact: bool = True) -> AuxNetConfig:
    """Desk-scale branch sizing near sqrt of the per-group width.

    exact=True factors the per-group size exactly (v1 style, no clipping);
    exact=False rounds r1 to sqrt and covers with a possibly larger block
    that is clipped back (v2 style).
    """
    if channels % groups != 0:
        raise ConfigurationError(f"groups={groups} must divide channels={channels}")
    per = channels // groups
    if exact:
        r1 = _largest_divisor_at_most_sqrt(per)
        r2 = per // r1
    else:
        r1 = max(1, round(math.sqrt(per)))
        r2 = -(-per // r1)
    hidden = max(2, channels // (4 * groups))
    return AuxNetConfig(channels=channels, groups=groups, m1_size=r1,
                        m2_rows=r2, m2_cols=r2,
                        mlp1_hidden=hidden, mlp2_hidden=hidden,
                        **_tiny_conv(r2))


def derive_expansion_config(c_in: int, c_out: int) -> AuxNetConfig:
    """Aux sizing for the rectangular expansion case (bottleneck widening)."""
    if c_out < c_in:
        raise ConfigurationError(f"expansion requires c_out ≥ c_in, got {c_out} < {c_in}")
    r1 = math.gcd(c_out, c_in)
    r1 = min(r1, max(1, round(math.sqrt(c_out))))
    while c_out % r1 or c_in % r1:
        r1 -= 1
    rows, cols = c_out // r1, c_in // r1
    hidden = max(2, c_in // 4)
    return AuxNetConfig(channels=c_in, groups=1, m1_size=r1,
                        m2_rows=rows, m2_cols=cols,
                        mlp1_hidden=hidden, mlp2_hidden=hidden,
                        mlp2_out=2 * cols - 1, conv_kernel=3, conv_channels=rows,
                        conv_stride=2, conv_pad=1,
                        clip_target=c_out, target_cols=c_in)
