"""View-decoupled transformer backbone with a pluggable token selector.

Sequence layout: slot 0 is the meta (global) token, slot 1 the view token,
slots 2.. hold patch tokens. Each block is a pre-norm encoder followed by the
decoupling subtraction meta <- meta - view. The retrieval embedding is the
final meta slot.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from . import selector as sel
from .errors import ConfigError, DimensionError, DomainError
from .selector import SelectorConfig, SelectorParams
from .tensor import Tensor

VIEW_AERIAL = 0
VIEW_GROUND = 1
VIEW_NAMES = {VIEW_AERIAL: "aerial", VIEW_GROUND: "ground"}
VIEW_IDS = {v: k for k, v in VIEW_NAMES.items()}

MLP_RATIO = 4
LN_EPS = 1e-6
# Gain on the straight-through attention bias. The bias is identically zero
# in the forward pass, so this constant only rescales the scorer's gradient;
# without it the scorer's updates are dwarfed by the backbone's.
ST_BIAS_GAIN = 4.0


@dataclass
class ModelConfig:
    num_identities: int
    num_blocks: int = 4
    embed_dim: int = 32
    num_attn_heads: int = 2
    patch_grid: tuple = (4, 4)
    patch_dim: int = 8
    num_views: int = 2
    selector: SelectorConfig = None

    def __post_init__(self):
        if self.embed_dim % self.num_attn_heads != 0:
            raise ConfigError(
                f"num_attn_heads {self.num_attn_heads} must divide embed_dim {self.embed_dim}")
        if self.num_views != 2:
            raise ConfigError(f"num_views is fixed at 2, got {self.num_views}")
        if min(self.num_identities, self.num_blocks, self.patch_dim) < 1:
            raise ConfigError("ModelConfig extents must be positive")
        if self.selector is not None:
            m = self.patch_grid[0] * self.patch_grid[1]
            if self.selector.k > m:
                raise ConfigError(f"SelectorConfig.K={self.selector.k} exceeds M={m}")
            if self.selector.num_heads and self.embed_dim % self.selector.num_heads != 0:
                raise ConfigError(
                    f"selector heads {self.selector.num_heads} must divide embed_dim")

    @property
    def num_patches(self):
        return self.patch_grid[0] * self.patch_grid[1]


@dataclass
class TokenSequence:
    tokens: Tensor            # [B, T, d]
    view_labels: np.ndarray   # [B] of VIEW_AERIAL / VIEW_GROUND
    origin_index: np.ndarray  # [B, T-2] original grid index of each patch slot


@dataclass
class ForwardResult:
    meta_feature: Tensor      # [B, d]
    view_feature: Tensor      # [B, d]
    id_logits: Tensor         # [B, num_identities]
    view_logits: Tensor       # [B, 2]
    selected_origin: np.ndarray = None  # [B, K] grid indices kept by the selector
    selected_slots: np.ndarray = None   # [B, K] patch-slot indices chosen
    selected_soft: np.ndarray = None    # [B, K] soft weights at those slots
    token_scores: sel.ScoreVector = None


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Fresh parameter dict, fully determined by the seed."""
    rng = np.random.default_rng(seed)
    d = cfg.embed_dim
    m = cfg.num_patches
    p = {}
    p["patch_embed.w"] = _uniform(rng, cfg.patch_dim, (cfg.patch_dim, d))
    p["patch_embed.b"] = Tensor(np.zeros(d), requires_grad=True)
    p["pos_embed"] = _uniform(rng, d, (m, d))
    p["meta_token"] = _uniform(rng, d, (d,))
    p["view_token.aerial"] = _uniform(rng, d, (d,))
    p["view_token.ground"] = _uniform(rng, d, (d,))
    for i in range(cfg.num_blocks):
        pre = f"block{i}."
        p[pre + "ln1.gamma"] = Tensor(np.ones(d), requires_grad=True)
        p[pre + "ln1.beta"] = Tensor(np.zeros(d), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + name] = _uniform(rng, d, (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + name] = Tensor(np.zeros(d), requires_grad=True)
        p[pre + "ln2.gamma"] = Tensor(np.ones(d), requires_grad=True)
        p[pre + "ln2.beta"] = Tensor(np.zeros(d), requires_grad=True)
        h = MLP_RATIO * d
        p[pre + "mlp.w1"] = _uniform(rng, d, (d, h))
        p[pre + "mlp.b1"] = Tensor(np.zeros(h), requires_grad=True)
        p[pre + "mlp.w2"] = _uniform(rng, h, (h, d))
        p[pre + "mlp.b2"] = Tensor(np.zeros(d), requires_grad=True)
    p["head.id.w"] = _uniform(rng, d, (d, cfg.num_identities))
    p["head.id.b"] = Tensor(np.zeros(cfg.num_identities), requires_grad=True)
    p["head.view.w"] = _uniform(rng, d, (d, cfg.num_views))
    p["head.view.b"] = Tensor(np.zeros(cfg.num_views), requires_grad=True)
    # Identity-initialized (and placed last so a given seed yields the same
    # backbone with or without the selector): the initial score is then each
    # token's squared norm, which already correlates with signal content and
    # keeps the scorer out of the near-uniform regime where its
    # straight-through gradient is too weak to escape.
    if cfg.selector is not None:
        p["selector.wq"] = Tensor(np.eye(d), requires_grad=True)
        p["selector.wk"] = Tensor(np.eye(d), requires_grad=True)
    return p


def patch_embed(x, params: dict, cfg: ModelConfig) -> Tensor:
    """Project the feature grid to embeddings and add positional embeddings."""
    x = np.asarray(x, dtype=np.float64)
    rows, cols = cfg.patch_grid
    if x.shape[1:] != (rows, cols, cfg.patch_dim):
        raise DimensionError(
            f"grid shape {x.shape[1:]} does not match configured {(rows, cols, cfg.patch_dim)}")
    b = x.shape[0]
    m = rows * cols
    flat = Tensor(x.reshape(b, m, cfg.patch_dim))
    out = T.matmul(flat, params["patch_embed.w"]) + params["patch_embed.b"]
    return out + params["pos_embed"]


def attach_special_tokens(patches: Tensor, view_labels, params: dict) -> TokenSequence:
    """Prepend the meta token (slot 0) and the per-item view token (slot 1)."""
    view_labels = np.asarray(view_labels)
    b, m, d = patches.shape
    if view_labels.shape != (b,):
        raise DomainError(f"expected {b} view labels, got shape {view_labels.shape}")
    bad = set(view_labels.tolist()) - set(VIEW_NAMES)
    if bad:
        raise DomainError(f"unknown view labels {sorted(bad)}")
    meta = T.broadcast_to(T.reshape(params["meta_token"], (1, 1, d)), (b, 1, d))
    views = T.concat([T.reshape(params["view_token.aerial"], (1, d)),
                      T.reshape(params["view_token.ground"], (1, d))], axis=0)
    onehot = np.zeros((b, 2))
    onehot[np.arange(b), view_labels] = 1.0
    view_slot = T.reshape(T.matmul(Tensor(onehot), views), (b, 1, d))
    tokens = T.concat([meta, view_slot, patches], axis=1)
    origin = np.broadcast_to(np.arange(m), (b, m)).copy()
    return TokenSequence(tokens=tokens, view_labels=view_labels, origin_index=origin)


def _attention(x: Tensor, params: dict, prefix: str, num_heads: int,
               key_bias: Tensor = None) -> Tensor:
    b, t, d = x.shape
    if d % num_heads != 0:
        raise DimensionError(f"attention heads {num_heads} must divide width {d}")
    dh = d // num_heads

    def proj(name, bias):
        y = T.matmul(x, params[prefix + name]) + params[prefix + bias]
        y = T.reshape(y, (b, t, num_heads, dh))
        return T.transpose(y, (0, 2, 1, 3))  # [B, H, T, dh]

    q = proj("wq", "bq")
    k = proj("wk", "bk")
    v = proj("wv", "bv")
    att = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    if key_bias is not None:
        # per-key logit bias, shared across heads and queries
        att = att + T.reshape(key_bias, (b, 1, 1, t))
    att = T.softmax_lastdim(att)
    ctx = T.matmul(att, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return T.matmul(ctx, params[prefix + "wo"]) + params[prefix + "bo"]


def encoder_block(seq: TokenSequence, params: dict, index: int,
                  cfg: ModelConfig, key_bias: Tensor = None) -> TokenSequence:
    """Pre-norm multi-head self-attention and MLP, both with residuals."""
    pre = f"block{index}."
    x = seq.tokens
    normed = T.layer_norm(x, params[pre + "ln1.gamma"], params[pre + "ln1.beta"], LN_EPS)
    x = x + _attention(normed, params, pre + "attn.", cfg.num_attn_heads, key_bias)
    normed = T.layer_norm(x, params[pre + "ln2.gamma"], params[pre + "ln2.beta"], LN_EPS)
    h = T.gelu(T.matmul(normed, params[pre + "mlp.w1"]) + params[pre + "mlp.b1"])
    x = x + (T.matmul(h, params[pre + "mlp.w2"]) + params[pre + "mlp.b2"])
    return replace(seq, tokens=x)


def vdt_decouple(seq: TokenSequence) -> TokenSequence:
    """meta <- meta - view; view and patch slots pass through unchanged."""
    t = seq.tokens.shape[1]
    meta = T.narrow(seq.tokens, 1, 0, 1)
    view = T.narrow(seq.tokens, 1, 1, 1)
    rest = T.narrow(seq.tokens, 1, 1, t - 1)
    return replace(seq, tokens=T.concat([meta - view, rest], axis=1))


def _apply_selector(seq: TokenSequence, params: dict, cfg: SelectorConfig,
                    rng, training: bool, frozen=None):
    """Score, select, and apply straight-through weights.

    `frozen`, when given, is (slot indices [B, K], baseline soft weights
    [B, K]): selection is pinned and the straight-through stop-gradient
    constant is replaced by the baseline, which makes the whole forward a
    smooth function of the parameters (used by finite-difference checks).
    """
    m = seq.tokens.shape[1] - 2
    patches = T.narrow(seq.tokens, 1, 2, m)
    sp = SelectorParams(w_q=params["selector.wq"], w_k=params["selector.wk"])
    scores = sel.score_tokens(patches, sp, cfg.num_heads)
    if frozen is None:
        run_cfg = replace(cfg, noise_enabled=cfg.noise_enabled and training)
        indices, soft = sel.perturbed_topk(scores, run_cfg, rng)
        picked = sel._gather_rows(soft, indices)
        delta = (picked - Tensor(picked.data)) * ST_BIAS_GAIN  # exactly zero forward
    else:
        indices, base = frozen
        run_cfg = replace(cfg, noise_enabled=False)
        _, soft = sel.perturbed_topk(scores, run_cfg, rng)
        picked = sel._gather_rows(soft, indices)
        delta = (picked - Tensor(np.asarray(base))) * ST_BIAS_GAIN
    new_seq = sel.select_tokens(seq, indices)
    b, k = np.asarray(indices).shape
    mult = T.reshape(delta + Tensor(np.ones((b, k))), (b, k, 1))
    specials = T.narrow(new_seq.tokens, 1, 0, 2)
    kept = T.narrow(new_seq.tokens, 1, 2, k) * mult
    new_seq = replace(new_seq, tokens=T.concat([specials, kept], axis=1))
    # straight-through attention bias for the next block: zero in the forward
    # pass, but its gradient measures how much more attention each kept token
    # should receive, which is what actually trains the scorer
    key_bias = T.concat([Tensor(np.zeros((b, 2))), delta], axis=1)
    info = {"origin": new_seq.origin_index, "slots": np.asarray(indices),
            "soft": picked.data.copy(), "scores": scores, "key_bias": key_bias}
    return new_seq, info


def model_forward(cfg: ModelConfig, params: dict, x, view_labels,
                  rng=None, training: bool = False,
                  frozen_selection=None) -> ForwardResult:
    """Full forward pass: embed, N encoder+decouple blocks, optional
    selection, classifier heads."""
    patches = patch_embed(x, params, cfg)
    seq = attach_special_tokens(patches, view_labels, params)
    info = None
    n = cfg.num_blocks
    for i in range(n):
        key_bias = None
        if (cfg.selector is not None and cfg.selector.position == sel.POSITION_LAST
                and i == n - 1):
            seq, info = _apply_selector(seq, params, cfg.selector, rng, training,
                                        frozen=frozen_selection)
            key_bias = info["key_bias"]
        seq = encoder_block(seq, params, i, cfg, key_bias=key_bias)
        seq = vdt_decouple(seq)
    if cfg.selector is not None and cfg.selector.position == sel.POSITION_SECOND_TO_LAST:
        seq, info = _apply_selector(seq, params, cfg.selector, rng, training,
                                    frozen=frozen_selection)
    b, _, d = seq.tokens.shape
    meta = T.reshape(T.narrow(seq.tokens, 1, 0, 1), (b, d))
    view = T.reshape(T.narrow(seq.tokens, 1, 1, 1), (b, d))
    id_logits = T.matmul(meta, params["head.id.w"]) + params["head.id.b"]
    view_logits = T.matmul(view, params["head.view.w"]) + params["head.view.b"]
    result = ForwardResult(meta_feature=meta, view_feature=view,
                           id_logits=id_logits, view_logits=view_logits)
    if info is not None:
        result.selected_origin = info["origin"]
        result.selected_slots = info["slots"]
        result.selected_soft = info["soft"]
        result.token_scores = info["scores"]
    return result


# ---------------------------------------------------------------------------
# checkpoint format: text manifest (one "name dim dim ..." line per parameter,
# in insertion order), an "end" line, then the flat float64 little-endian data.

_MAGIC = b"dtst-checkpoint v1\n"


def save_checkpoint(path, params: dict) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        for name, p in params.items():
            dims = " ".join(str(n) for n in p.shape)
            f.write(f"{name} {dims}".rstrip().encode() + b"\n")
        f.write(b"end\n")
        for p in params.values():
            f.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Returns name -> ndarray in manifest order."""
    if not os.path.isfile(path):
        raise DomainError(f"checkpoint file not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(_MAGIC):
        raise DomainError(f"{path} is not a checkpoint file")
    header_end = blob.index(b"\nend\n")
    manifest = blob[len(_MAGIC):header_end + 1].decode().splitlines()
    payload = blob[header_end + len(b"\nend\n"):]
    out = {}
    offset = 0
    for line in manifest:
        parts = line.split()
        name, dims = parts[0], tuple(int(v) for v in parts[1:])
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(dims).astype(np.float64)
        offset += count * 8
    return out


def restore_params(params: dict, arrays: dict) -> None:
    """Load checkpoint arrays into an existing parameter dict in place."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise DomainError(f"checkpoint mismatch: missing {sorted(missing)}, "
                          f"unexpected {sorted(extra)}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise DimensionError(f"checkpoint shape {arrays[name].shape} for "
                                 f"'{name}' does not match {p.shape}")
        p.data = arrays[name].copy()
