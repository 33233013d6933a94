"""The network: a five-stage U of transformer blocks over a shrinking and
re-growing token grid.

Three encoder stages are connected by two down-sampling modules (AdaLN-
modulated tokens, 2x2 window concatenation, linear projection, fresh
absolute positional encoding); two decoder stages follow, each fed by an
up-sampling module (linear expansion to a 2x2 window) and a long skip from
the same-resolution encoder stage (AdaLN on the encoder branch, channel
concat, linear, positional encoding). Blocks use adaLN-Zero conditioning:
all six modulation parameters come from a zero-initialized projection of the
condition vector, so every block starts as the identity and the zero-
initialized output head makes the whole fresh network emit zeros.

Block-internal linears carry no biases and the two block layernorms are not
affine, so one block holds exactly 18*d^2 parameters and one forward pass of
it costs exactly 2*n^2*d + 12*n*d^2 + 6*d^2 MACs at batch 1.

Attention modulation is attached at inference only: matrices for the two
decoder grids are built once, blocks flagged by the placement schedule
multiply their post-softmax scores, no parameter changes anywhere, and
detaching restores the original forward bit-for-bit.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .amm import (
    AmmParams,
    GridGeometry,
    build_amm,
    default_schedule,
    modulate,
)
from .errors import ConfigError, DimensionError
from .masking import MaskSpec, MaskToken, apply_mask
from .numerics import (
    Rng,
    Tensor,
    concat,
    gather,
    gelu,
    layernorm,
    silu,
    softmax_rows,
)

# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelConfig:
    """Architectural description: stage plan, grid, conditioning, schedules."""

    patch_size: int = 2
    stage_blocks: tuple = (2, 2, 2, 3, 3)
    stage_dims: tuple = (24, 32, 40, 32, 24)
    stage_heads: tuple = (2, 4, 4, 4, 2)
    class_count: int = 8
    latent_channels: int = 4
    grid_side: int = 8
    amm: AmmParams = field(default_factory=AmmParams)
    mask: MaskSpec = field(default_factory=MaskSpec)

    def __post_init__(self):
        object.__setattr__(self, "stage_blocks", tuple(int(b) for b in self.stage_blocks))
        object.__setattr__(self, "stage_dims", tuple(int(d) for d in self.stage_dims))
        object.__setattr__(self, "stage_heads", tuple(int(h) for h in self.stage_heads))
        if not (len(self.stage_blocks) == len(self.stage_dims) == len(self.stage_heads) == 5):
            raise ConfigError("exactly 5 stages: 3 encoder + 2 decoder")
        if any(b < 0 for b in self.stage_blocks):
            raise ConfigError("stage block counts must be >= 0")
        for d, h in zip(self.stage_dims, self.stage_heads):
            if d < 1 or h < 1 or d % h != 0:
                raise ConfigError(f"stage dim {d} must be a positive multiple of its head count {h}")
            if d % 4 != 0:
                raise ConfigError(f"stage dim {d} must be divisible by 4 for the 2-D positional tables")
        if self.stage_dims[3] != self.stage_dims[1] or self.stage_dims[4] != self.stage_dims[0]:
            raise ConfigError("decoder dims must mirror encoder dims (symmetric U)")
        if self.grid_side % 4 != 0:
            raise ConfigError("grid side must be divisible by 4 (two 2x halvings)")
        if self.patch_size < 1 or self.latent_channels < 1 or self.class_count < 1:
            raise ConfigError("patch size, channels, and class count must be positive")

    @property
    def latent_size(self):
        return self.grid_side * self.patch_size

    @property
    def token_counts(self):
        n0 = self.grid_side * self.grid_side
        return (n0, n0 // 4, n0 // 16, n0 // 4, n0)

    @property
    def grid_sides(self):
        n = self.grid_side
        return (n, n // 2, n // 4, n // 2, n)

    def to_dict(self):
        return {
            "patch_size": self.patch_size,
            "stage_blocks": list(self.stage_blocks),
            "stage_dims": list(self.stage_dims),
            "stage_heads": list(self.stage_heads),
            "class_count": self.class_count,
            "latent_channels": self.latent_channels,
            "grid_side": self.grid_side,
            "amm": {"scale": self.amm.scale, "radius": self.amm.radius},
            "mask": {
                "stage1_ratio_range": list(self.mask.stage1_ratio_range),
                "stage2_ratio_range": list(self.mask.stage2_ratio_range),
                "seed": self.mask.seed,
            },
        }

    @classmethod
    def from_dict(cls, data):
        allowed = {
            "patch_size", "stage_blocks", "stage_dims", "stage_heads",
            "class_count", "latent_channels", "grid_side", "amm", "mask",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k not in ("amm", "mask")}
        for key in ("stage_blocks", "stage_dims", "stage_heads"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "amm" in data:
            amm_data = dict(data["amm"])
            unknown = set(amm_data) - {"scale", "radius"}
            if unknown:
                raise ConfigError(f"unknown amm config keys: {sorted(unknown)}")
            kwargs["amm"] = AmmParams(**amm_data)
        if "mask" in data:
            mask_data = dict(data["mask"])
            unknown = set(mask_data) - {"stage1_ratio_range", "stage2_ratio_range", "seed"}
            if unknown:
                raise ConfigError(f"unknown mask config keys: {sorted(unknown)}")
            for key in ("stage1_ratio_range", "stage2_ratio_range"):
                if key in mask_data:
                    mask_data[key] = tuple(mask_data[key])
            kwargs["mask"] = MaskSpec(**mask_data)
        return cls(**kwargs)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def edt_nano_config(**overrides):
    """Desk-scale default: the full-size stage shape at toy dimensions."""
    return replace(ModelConfig(), **overrides) if overrides else ModelConfig()


def edt_s_config(**overrides):
    """The small full-size variant, used for analytical accounting only."""
    cfg = ModelConfig(
        patch_size=2,
        stage_blocks=(2, 2, 2, 3, 3),
        stage_dims=(312, 416, 520, 416, 312),
        stage_heads=(6, 8, 10, 8, 6),
        class_count=1000,
        latent_channels=4,
        grid_side=16,
    )
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# positional tables and token reshapes


def sincos_positions_2d(grid_side, dim):
    """Fixed 2-D sine/cosine table, (grid_side^2, dim); dim divisible by 4."""
    if dim % 4 != 0:
        raise DimensionError("positional dim must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / (10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter))
    idx = np.arange(grid_side * grid_side)
    rows = (idx // grid_side)[:, None] * omega[None, :]
    cols = (idx % grid_side)[:, None] * omega[None, :]
    return np.concatenate(
        [np.sin(rows), np.cos(rows), np.sin(cols), np.cos(cols)], axis=1
    )


def timestep_frequencies(t, dim=256):
    """Sine/cosine features of the (float) timestep, (batch, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


def patch_tokens(x, patch_size):
    """(B, C, H, W) -> (B, (H/p)*(W/p), p*p*C) in row-major token order."""
    b, c, h, w = x.shape
    p = patch_size
    if h % p != 0 or w % p != 0:
        raise DimensionError(f"spatial extents {h}x{w} not divisible by patch {p}")
    gh, gw = h // p, w // p
    t = x.reshape(b, c, gh, p, gw, p)
    t = t.transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(b, gh * gw, p * p * c)


def unpatch_tokens(tokens, patch_size, channels, grid_side):
    """Inverse of patch_tokens for square grids."""
    b = tokens.shape[0]
    p, c, g = patch_size, channels, grid_side
    t = tokens.reshape(b, g, g, p, p, c)
    t = t.transpose(0, 5, 1, 3, 2, 4)
    return t.reshape(b, c, g * p, g * p)


def merge_2x2(tokens, grid_side):
    """Concatenate each 2x2 token window: (B, s^2, d) -> (B, (s/2)^2, 4d)."""
    b, n, d = tokens.shape
    if grid_side % 2 != 0:
        raise DimensionError(f"grid side {grid_side} must be even to merge")
    if n != grid_side * grid_side:
        raise DimensionError(f"{n} tokens do not fill a {grid_side}x{grid_side} grid")
    h = grid_side // 2
    t = tokens.reshape(b, h, 2, h, 2, d)
    t = t.transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(b, h * h, 4 * d)


def expand_2x2(tokens, grid_side):
    """Inverse spatial layout of merge_2x2: (B, s^2, 4d) -> (B, (2s)^2, d)."""
    b, n, dd = tokens.shape
    if dd % 4 != 0:
        raise DimensionError("token dim must be divisible by 4 to expand")
    d = dd // 4
    s = grid_side
    t = tokens.reshape(b, s, s, 2, 2, d)
    t = t.transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(b, 4 * n, d)


def modulate_tokens(tokens, shift, scale):
    """AdaLN modulation x * (1 + scale) + shift with (B, d) parameters."""
    b, d = shift.shape
    return tokens * (scale.reshape(b, 1, d) + 1.0) + shift.reshape(b, 1, d)


# ---------------------------------------------------------------------------
# parameterized pieces


class Linear:
    """y = x @ w (+ b), registered into the model's parameter dict."""

    def __init__(self, params, rng, name, d_in, d_out, bias=True, init="xavier", dtype=np.float32):
        if init == "zero":
            w = np.zeros((d_in, d_out))
        elif init == "xavier":
            lim = math.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-lim, lim, (d_in, d_out))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.w = Tensor(w.astype(dtype), requires_grad=True)
        params[f"{name}.w"] = self.w
        self.b = None
        if bias:
            self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
            params[f"{name}.b"] = self.b

    def __call__(self, x):
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y


class ConditionEmbedding:
    """Timestep + class embeddings at every distinct stage dimension.

    The class table reserves its last row (index class_count) for the null
    condition used by guidance.
    """

    FREQ_DIM = 256

    def __init__(self, params, rng, dims, class_count, dtype):
        self.class_count = class_count
        self.dims = tuple(sorted(set(dims)))
        self.dtype = dtype
        self._t1 = {}
        self._t2 = {}
        self._tables = {}
        for d in self.dims:
            self._t1[d] = Linear(params, rng, f"cond.d{d}.t1", self.FREQ_DIM, d, dtype=dtype)
            self._t2[d] = Linear(params, rng, f"cond.d{d}.t2", d, d, dtype=dtype)
            table = rng.normal((class_count + 1, d)) * 0.02
            self._tables[d] = Tensor(table.astype(dtype), requires_grad=True)
            params[f"cond.d{d}.classes"] = self._tables[d]

    def __call__(self, t, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y > self.class_count):
            raise DimensionError(
                f"class labels must lie in [0, {self.class_count}] (last = null)"
            )
        freq = Tensor(timestep_frequencies(t, self.FREQ_DIM).astype(self.dtype))
        out = {}
        for d in self.dims:
            t_emb = self._t2[d](silu(self._t1[d](freq)))
            out[d] = t_emb + gather(self._tables[d], y)
        return out


class EdtBlock:
    """Pre-norm transformer block with adaLN-Zero conditioning.

    No biases and no affine norms inside: 18*d^2 parameters exactly. The
    optional modulation matrix multiplies post-softmax attention scores.
    """

    def __init__(self, params, rng, name, d, heads, dtype, zero_gates=True):
        self.d = d
        self.heads = heads
        mode = "zero" if zero_gates else "xavier"
        self.adaln = Linear(params, rng, f"{name}.adaln", d, 6 * d, bias=False, init=mode, dtype=dtype)
        self.qkv = Linear(params, rng, f"{name}.qkv", d, 3 * d, bias=False, dtype=dtype)
        self.proj = Linear(params, rng, f"{name}.proj", d, d, bias=False, dtype=dtype)
        self.fc1 = Linear(params, rng, f"{name}.fc1", d, 4 * d, bias=False, dtype=dtype)
        self.fc2 = Linear(params, rng, f"{name}.fc2", 4 * d, d, bias=False, dtype=dtype)

    def _attention(self, h, modmatrix):
        b, n, d = h.shape
        nh = self.heads
        hd = d // nh
        qkv = self.qkv(h).reshape(b, n, 3, nh, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
        att = softmax_rows(scores)
        if modmatrix is not None:
            att = modulate(att, modmatrix)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)

    def __call__(self, x, c, modmatrix=None):
        b, n, d = x.shape
        if d != self.d:
            raise DimensionError(f"block of width {self.d} fed {d}-dim tokens")
        mod = self.adaln(silu(c))
        chunks = [mod[:, i * d:(i + 1) * d] for i in range(6)]
        shift1, scale1, gate1, shift2, scale2, gate2 = chunks
        h = modulate_tokens(layernorm(x), shift1, scale1)
        x = x + gate1.reshape(b, 1, d) * self._attention(h, modmatrix)
        h = modulate_tokens(layernorm(x), shift2, scale2)
        x = x + gate2.reshape(b, 1, d) * self.fc2(gelu(self.fc1(h)))
        return x


class Downsample:
    """AdaLN, 2x2 merge, linear to d_out, optional masking, positional refresh.

    The condition is folded into the tokens *before* the merge so it survives
    the 4-to-1 compression; the positional table of the merged grid is added
    after, because merging scrambles the one added earlier.
    """

    def __init__(self, params, rng, name, d_in, d_out, grid_in, dtype, zero_mod=True):
        if grid_in % 2 != 0:
            raise DimensionError(f"cannot halve an odd grid side {grid_in}")
        self.d_in, self.d_out = d_in, d_out
        self.grid_in = grid_in
        self.grid_out = grid_in // 2
        mode = "zero" if zero_mod else "xavier"
        self.mod = Linear(params, rng, f"{name}.adaln", d_in, 2 * d_in, init=mode, dtype=dtype)
        self.proj = Linear(params, rng, f"{name}.proj", 4 * d_in, d_out, dtype=dtype)
        token = rng.normal((d_out,)) * 0.02
        self.mask_token = MaskToken(Tensor(token.astype(dtype), requires_grad=True))
        params[f"{name}.mask_token"] = self.mask_token.vector
        self.pe = Tensor(sincos_positions_2d(self.grid_out, d_out).astype(dtype))
        # test hook: transforms pre-substitution content at masked positions
        self.premask_hook = None

    def __call__(self, x, c, mask=None):
        mod = self.mod(silu(c))
        shift, scale = mod[:, : self.d_in], mod[:, self.d_in:]
        h = modulate_tokens(layernorm(x), shift, scale)
        z = self.proj(merge_2x2(h, self.grid_in))
        if mask is not None:
            if self.premask_hook is not None:
                z = Tensor(self.premask_hook(np.array(z.data, copy=True), mask))
            z = apply_mask(z, mask, self.mask_token)
        return z + self.pe


class Upsample:
    """Linear d_in -> 4*d_out, then each token becomes a 2x2 window."""

    def __init__(self, params, rng, name, d_in, d_out, grid_in, dtype):
        self.grid_in = grid_in
        self.proj = Linear(params, rng, f"{name}.proj", d_in, 4 * d_out, dtype=dtype)

    def __call__(self, x):
        return expand_2x2(self.proj(x), self.grid_in)


class LongSkip:
    """Fuse the same-resolution encoder tokens into the decoder stream."""

    def __init__(self, params, rng, name, d_enc, d_dec, grid, dtype, zero_mod=True):
        self.d_enc, self.d_dec = d_enc, d_dec
        mode = "zero" if zero_mod else "xavier"
        self.mod = Linear(params, rng, f"{name}.adaln", d_enc, 2 * d_enc, init=mode, dtype=dtype)
        self.proj = Linear(params, rng, f"{name}.proj", d_enc + d_dec, d_dec, dtype=dtype)
        self.pe = Tensor(sincos_positions_2d(grid, d_dec).astype(dtype))

    def __call__(self, enc, dec, c_enc):
        if enc.shape[1] != dec.shape[1]:
            raise DimensionError(
                f"skip branches carry {enc.shape[1]} vs {dec.shape[1]} tokens"
            )
        mod = self.mod(silu(c_enc))
        shift, scale = mod[:, : self.d_enc], mod[:, self.d_enc:]
        e = modulate_tokens(layernorm(enc), shift, scale)
        return self.proj(concat([e, dec], axis=2)) + self.pe


class FinalLayer:
    """AdaLN-modulated zero-initialized head back to patch pixels."""

    def __init__(self, params, rng, name, d, patch_dim, dtype, zero_gates=True):
        self.d = d
        mode = "zero" if zero_gates else "xavier"
        self.mod = Linear(params, rng, f"{name}.adaln", d, 2 * d, init=mode, dtype=dtype)
        self.head = Linear(params, rng, f"{name}.head", d, patch_dim, init=mode, dtype=dtype)

    def __call__(self, x, c):
        mod = self.mod(silu(c))
        shift, scale = mod[:, : self.d], mod[:, self.d:]
        h = modulate_tokens(layernorm(x), shift, scale)
        return self.head(h)


# ---------------------------------------------------------------------------
# the model


class EdtModel:
    """Five-stage encoder/decoder over a token grid, noise-prediction head."""

    def __init__(self, config, seed=0, dtype=np.float32, zero_gates=True):
        self.config = config
        self.dtype = np.dtype(dtype).type
        self.params = {}
        rng = Rng(seed)
        p = config.patch_size
        c_lat = config.latent_channels
        d = config.stage_dims
        grids = config.grid_sides
        patch_dim = p * p * c_lat

        self.patch_embed = Linear(self.params, rng, "patch_embed", patch_dim, d[0], dtype=dtype)
        self.pe0 = Tensor(sincos_positions_2d(grids[0], d[0]).astype(dtype))
        token = rng.normal((d[0],)) * 0.02
        self.input_mask_token = MaskToken(Tensor(token.astype(dtype), requires_grad=True))
        self.params["input_mask_token"] = self.input_mask_token.vector
        self.cond = ConditionEmbedding(self.params, rng, d, config.class_count, dtype)

        self.stages = []
        for s in range(5):
            blocks = [
                EdtBlock(self.params, rng, f"stage{s}.block{i}", d[s], config.stage_heads[s], dtype, zero_gates)
                for i in range(config.stage_blocks[s])
            ]
            self.stages.append(blocks)

        self.down0 = Downsample(self.params, rng, "down0", d[0], d[1], grids[0], dtype, zero_gates)
        self.down1 = Downsample(self.params, rng, "down1", d[1], d[2], grids[1], dtype, zero_gates)
        self.up0 = Upsample(self.params, rng, "up0", d[2], d[3], grids[2], dtype)
        self.skip0 = LongSkip(self.params, rng, "skip0", d[1], d[3], grids[3], dtype, zero_gates)
        self.up1 = Upsample(self.params, rng, "up1", d[3], d[4], grids[3], dtype)
        self.skip1 = LongSkip(self.params, rng, "skip1", d[0], d[4], grids[4], dtype, zero_gates)
        self.final = FinalLayer(self.params, rng, "final", d[4], patch_dim, dtype, zero_gates)
        self._amm = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def down_grid_sides(self):
        """Post-merge grid sides of the two down-sampling modules."""
        return (self.config.grid_side // 2, self.config.grid_side // 4)

    def parameter_count(self):
        return sum(t.data.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def state_arrays(self):
        return {name: t.data for name, t in self.params.items()}

    def load_state_arrays(self, arrays):
        """Copy parameter values in; raises listing every mismatched tensor."""
        from .errors import CheckpointMismatchError

        mismatched = []
        for name, t in self.params.items():
            arr = arrays.get(name)
            if arr is None or arr.shape != t.data.shape or arr.dtype != t.data.dtype:
                mismatched.append(name)
        extra = [name for name in arrays if name not in self.params]
        mismatched.extend(extra)
        if mismatched:
            raise CheckpointMismatchError(
                f"{len(mismatched)} tensors do not match the model: {sorted(mismatched)}",
                mismatched,
            )
        for name, t in self.params.items():
            t.data = arrays[name].copy()

    # -- attention modulation ------------------------------------------------

    def amm_attached(self):
        return self._amm is not None

    # -- forward -----------------------------------------------------------

    def _run_stage(self, s, tokens, c, trace):
        flags = None
        if self._amm is not None and s >= 3:
            matrix, flags = self._amm[s - 3]
        for i, block in enumerate(self.stages[s]):
            mod = None
            if flags is not None and flags[i]:
                mod = matrix
            tokens = block(tokens, c, mod)
        if trace is not None:
            trace[f"stage{s}"] = np.array(tokens.data, copy=True)
        return tokens

    def forward(self, x, t, y, mask_grids=None, input_mask=None, trace=None):
        """Predict the noise content of x at step t under class condition y.

        mask_grids: optional (MaskGrid, MaskGrid) applied inside the two
        down-sampling modules. input_mask: optional MaskGrid applied to the
        token grid right after patchify. trace: optional dict that receives
        numpy copies of intermediate activations, keyed by module.
        """
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        expect = (cfg.latent_channels, cfg.latent_size, cfg.latent_size)
        if x.shape[1:] != expect:
            raise DimensionError(f"latent shape {x.shape[1:]} != configured {expect}")
        t = np.asarray(t)
        y = np.asarray(y)
        if t.shape != (x.shape[0],) or y.shape != (x.shape[0],):
            raise DimensionError("need one timestep and one label per sample")
        m0 = m1 = None
        if mask_grids is not None:
            m0, m1 = mask_grids
        d = cfg.stage_dims
        c = self.cond(t, y)

        tokens = patch_tokens(x, cfg.patch_size)
        tokens = self.patch_embed(tokens) + self.pe0
        if input_mask is not None:
            tokens = apply_mask(tokens, input_mask, self.input_mask_token)
        if trace is not None:
            trace["patchify"] = np.array(tokens.data, copy=True)

        tokens = self._run_stage(0, tokens, c[d[0]], trace)
        enc0 = tokens
        tokens = self.down0(tokens, c[d[0]], m0)
        if trace is not None:
            trace["down0"] = np.array(tokens.data, copy=True)
        tokens = self._run_stage(1, tokens, c[d[1]], trace)
        enc1 = tokens
        tokens = self.down1(tokens, c[d[1]], m1)
        if trace is not None:
            trace["down1"] = np.array(tokens.data, copy=True)
        tokens = self._run_stage(2, tokens, c[d[2]], trace)

        tokens = self.up0(tokens)
        if trace is not None:
            trace["up0"] = np.array(tokens.data, copy=True)
        tokens = self.skip0(enc1, tokens, c[d[1]])
        if trace is not None:
            trace["skip0"] = np.array(tokens.data, copy=True)
        tokens = self._run_stage(3, tokens, c[d[3]], trace)

        tokens = self.up1(tokens)
        if trace is not None:
            trace["up1"] = np.array(tokens.data, copy=True)
        tokens = self.skip1(enc0, tokens, c[d[0]])
        if trace is not None:
            trace["skip1"] = np.array(tokens.data, copy=True)
        tokens = self._run_stage(4, tokens, c[d[4]], trace)

        out = self.final(tokens, c[d[4]])
        out = unpatch_tokens(out, cfg.patch_size, cfg.latent_channels, cfg.grid_side)
        if trace is not None:
            trace["output"] = np.array(out.data, copy=True)
        return out

    __call__ = forward


def attach_amm(model, params=None, schedule=None):
    """Equip decoder blocks with modulation matrices, inference-only.

    Builds one matrix per decoder grid size from the given parameter template
    (the model config's template by default) and stores them next to the
    schedule. No parameter is created, changed, or removed.
    """
    cfg = model.config
    if params is None:
        params = cfg.amm
    counts = cfg.stage_blocks[3:]
    if schedule is None:
        schedule = default_schedule(counts)
    flags = schedule.stage_flags
    if len(flags) != len(counts) or any(len(f) != c for f, c in zip(flags, counts)):
        raise ConfigError(
            f"schedule shape {[len(f) for f in flags]} does not match decoder blocks {list(counts)}"
        )
    grids = (cfg.grid_side // 2, cfg.grid_side)
    model._amm = tuple(
        (build_amm(GridGeometry(n), params), f) for n, f in zip(grids, flags)
    )
    return model


def detach_amm(model):
    """Remove attention modulation; the forward pass reverts bit-exactly."""
    model._amm = None
    return model
