"""Register-token vision transformer for live/spoof classification.

The input image is cut into non-overlapping square patches which are
flattened, linearly embedded, and prefixed with one class token and a
configurable number of register tokens. Registers take part in attention
like any other token but carry no positional embedding and are never read
by the classification head; they exist to soak up the high-norm outlier
patches that otherwise perturb attention maps. The head is a single
affine map over the normalized class-token output of the last block.

Archive naming scheme (see weights.py): `patch_embed.{weight,bias}`,
`cls_token`, `register_tokens`, `pos_embed`,
`blocks.{i}.{norm1,norm2}.{weight,bias}`,
`blocks.{i}.attn.{qkv,proj}.{weight,bias}`,
`blocks.{i}.mlp.{fc1,fc2}.{weight,bias}`,
`final_norm.{weight,bias}`, `head.{weight,bias}` with 0-based block i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class ModelConfig:
    """Architectural hyperparameters of the register-token transformer."""

    image_size: int = 224
    patch_size: int = 14
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: float = 4.0
    num_register_tokens: int = 4
    num_classes: int = 2
    drop_rate: float = 0.0

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_register_tokens < 0:
            raise ConfigError("num_register_tokens must be >= 0")
        if self.num_classes != 2:
            raise ConfigError("num_classes is fixed at 2 (live, spoof)")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ConfigError(f"drop_rate must lie in [0,1], got {self.drop_rate}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


@dataclass(frozen=True)
class TokenLayout:
    """How the token sequence splits into class / register / patch segments."""

    n_class: int
    n_register: int
    n_patch: int

    @property
    def total(self) -> int:
        return self.n_class + self.n_register + self.n_patch

    @property
    def class_index(self) -> int:
        return 0

    @property
    def register_slice(self) -> slice:
        return slice(self.n_class, self.n_class + self.n_register)

    @property
    def patch_slice(self) -> slice:
        return slice(self.n_class + self.n_register, self.total)


def token_layout(config: ModelConfig) -> TokenLayout:
    return TokenLayout(n_class=1, n_register=config.num_register_tokens, n_patch=config.num_patches)


@dataclass
class AttentionRecord:
    """Post-softmax attention probabilities for one (layer, head); 1-based layer."""

    layer: int
    head: int
    weights: np.ndarray  # (query tokens, key tokens), each row sums to 1


@dataclass
class Logits:
    """Raw class scores, index 0 = live, index 1 = spoof."""

    values: np.ndarray


@dataclass
class ForwardResult:
    logits: Logits
    attention: list[AttentionRecord] | None = None
    final_tokens: np.ndarray | None = None  # (tokens, embed_dim) output of last block
    token_norms: np.ndarray | None = None


def patchify(image, config: ModelConfig) -> np.ndarray:
    """Cut an H x W x 3 image into flattened patches in row-major grid order.

    Each patch is flattened row-major with the channel axis last, giving
    vectors of length patch_size^2 * 3.
    """
    arr = np.asarray(image)
    expected = (config.image_size, config.image_size, 3)
    if arr.shape != expected:
        raise ConfigError(f"patchify: expected image of shape {expected}, got {arr.shape}")
    g, p = config.grid_size, config.patch_size
    return arr.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * 3)


def _patchify_batch(images: torch.Tensor, config: ModelConfig) -> torch.Tensor:
    # (B, H, W, 3) -> (B, N, patch_dim); same ordering as patchify()
    b = images.shape[0]
    g, p = config.grid_size, config.patch_size
    x = images.reshape(b, g, p, g, p, 3)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, g * g, p * p * 3)


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int, drop_rate: float):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.drop = nn.Dropout(drop_rate)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        out = self.drop(self.proj(out))
        return out, attn  # attn: (B, heads, N, N) post-softmax probabilities


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int, drop_rate: float):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        self.drop = nn.Dropout(drop_rate)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc2(self.drop(self.act(self.fc1(x)))))


class Block(nn.Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, drop_rate: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads, drop_rate)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), drop_rate)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        attn_out, attn = self.attn(self.norm1(x))
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return x, attn


class RegisterViT(nn.Module):
    """The full backbone plus binary classification head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        self.patch_embed = nn.Linear(config.patch_dim, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.register_tokens = nn.Parameter(torch.zeros(config.num_register_tokens, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + config.num_patches, dim))
        self.embed_drop = nn.Dropout(config.drop_rate)
        self.blocks = nn.ModuleList(
            Block(dim, config.num_heads, config.mlp_ratio, config.drop_rate)
            for _ in range(config.depth)
        )
        self.final_norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, config.num_classes)
        self._init_weights()

    def _init_weights(self):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        if self.config.num_register_tokens:
            nn.init.trunc_normal_(self.register_tokens, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def layout(self) -> TokenLayout:
        return token_layout(self.config)

    def build_tokens(self, images: torch.Tensor) -> tuple[torch.Tensor, TokenLayout]:
        """Embed a (B, H, W, 3) batch into [class, registers..., patches...] order.

        Positional embeddings are added to the class and patch tokens only;
        register tokens are appended afterwards and carry none.
        """
        if images.ndim != 4 or images.shape[1:] != (
            self.config.image_size,
            self.config.image_size,
            3,
        ):
            raise ConfigError(
                f"expected batch of {self.config.image_size}x{self.config.image_size}x3 "
                f"images, got {tuple(images.shape)}"
            )
        b = images.shape[0]
        patches = self.patch_embed(_patchify_batch(images, self.config))
        patches = patches + self.pos_embed[:, 1:]
        cls = (self.cls_token + self.pos_embed[:, :1]).expand(b, -1, -1)
        regs = self.register_tokens.unsqueeze(0).expand(b, -1, -1)
        tokens = torch.cat([cls, regs, patches], dim=1)
        return self.embed_drop(tokens), self.layout()

    def forward(
        self, images: torch.Tensor, capture: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, list[torch.Tensor], torch.Tensor]:
        """Returns (B, 2) logits; with capture also per-block attention and final tokens."""
        tokens, _ = self.build_tokens(images)
        attn_maps = []
        for i, block in enumerate(self.blocks):
            tokens, attn = block(tokens)
            if not torch.isfinite(tokens).all():
                raise NumericError(f"non-finite activations after block {i + 1}")
            if capture:
                attn_maps.append(attn)
        logits = self.head(self.final_norm(tokens[:, 0]))
        if not torch.isfinite(logits).all():
            raise NumericError("non-finite activations in classification head")
        if capture:
            return logits, attn_maps, tokens
        return logits


def build_model(config: ModelConfig, seed: int | None = None) -> RegisterViT:
    if seed is not None:
        torch.manual_seed(seed)
    return RegisterViT(config)


def forward_image(model: RegisterViT, image, capture_attention: bool = False) -> ForwardResult:
    """Evaluate one H x W x 3 image; optionally capture attention and token norms."""
    arr = np.asarray(image, dtype=np.float32)
    dtype = next(model.parameters()).dtype
    batch = torch.from_numpy(arr).to(dtype).unsqueeze(0)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            if capture_attention:
                logits_t, attn_maps, tokens = model(batch, capture=True)
            else:
                logits_t = model(batch)
    finally:
        model.train(was_training)
    logits = Logits(logits_t[0].double().numpy())
    if not capture_attention:
        return ForwardResult(logits=logits)
    records = []
    for layer_idx, attn in enumerate(attn_maps, start=1):
        for head in range(attn.shape[1]):
            records.append(
                AttentionRecord(
                    layer=layer_idx, head=head, weights=attn[0, head].double().numpy()
                )
            )
    final_tokens = tokens[0].double().numpy()
    norms = np.linalg.norm(final_tokens, axis=1)
    return ForwardResult(
        logits=logits, attention=records, final_tokens=final_tokens, token_norms=norms
    )


def live_probability(logits) -> float:
    """Normalized exponential of the live logit over both class logits."""
    values = logits.values if isinstance(logits, Logits) else np.asarray(logits, dtype=np.float64)
    if values.shape != (2,):
        raise ValueError(f"expected 2 logits (live, spoof), got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite logits")
    shifted = values - values.max()
    exp = np.exp(shifted)
    return float(exp[0] / exp.sum())


@dataclass
class TokenNormReport:
    """Per-token output norms with outlier flags, split by token role."""

    norms: np.ndarray
    threshold: float
    flags: np.ndarray  # boolean, aligned with norms
    class_outliers: list[int]
    register_outliers: list[int]
    patch_outliers: list[int]
    patch_outlier_rate: float


def token_norm_report(final_tokens, layout: TokenLayout, k: float = 3.0) -> TokenNormReport:
    """Flag tokens whose L2 norm exceeds median + k * IQR of all token norms.

    Outliers are reported separately for class, register, and patch tokens;
    the patch outlier rate counts patch tokens only.
    """
    tokens = np.asarray(final_tokens, dtype=np.float64)
    if tokens.shape[0] != layout.total:
        raise ConfigError(
            f"token count {tokens.shape[0]} does not match layout total {layout.total}"
        )
    norms = np.linalg.norm(tokens, axis=1)
    q1, median, q3 = np.percentile(norms, [25.0, 50.0, 75.0])
    threshold = float(median + k * (q3 - q1))
    flags = norms > threshold
    indices = np.arange(layout.total)
    patch_flags = flags[layout.patch_slice]
    return TokenNormReport(
        norms=norms,
        threshold=threshold,
        flags=flags,
        class_outliers=[0] if flags[layout.class_index] else [],
        register_outliers=indices[layout.register_slice][flags[layout.register_slice]].tolist(),
        patch_outliers=indices[layout.patch_slice][patch_flags].tolist(),
        patch_outlier_rate=float(patch_flags.mean()) if layout.n_patch else 0.0,
    )
