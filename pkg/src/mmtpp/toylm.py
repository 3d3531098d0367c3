"""Toy decoder-only causal transformer over the event-template vocabulary.

A small stand-in backbone exercising the full mechanism at desk scale:
stage-1 next-token training on whole streams, stage-2 response-only
fine-tuning on prompt/response pairs, image fusion at placeholder tokens,
and temperature decoding with task-specific stop rules.

Image fusion is additive: at every image-placeholder position the learned
adapter projection of the image feature vector is added to the placeholder
token's embedding, so a zero adapter with zero features reproduces the
plain forward pass bit-exactly.

Training runs in float32 at batch size 1 with gradient-norm clipping;
gradient-check tests construct the model in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    ContextOverflowError,
    FeatureCountMismatchError,
    NonFiniteLossError,
)
from .templating import (
    STRUCTURAL_TOKENS,
    PromptResponsePair,
    TokenStream,
    Vocabulary,
)

IMAGE_PAD_ID = STRUCTURAL_TOKENS.index("<|image_pad|>")


@dataclass(frozen=True)
class ToyLMConfig:
    vocab_size: int
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    context_len: int = 1024
    stage1_lr: float = 1e-4
    stage1_epochs: int = 5
    stage2_lr: float = 1e-4
    stage2_epochs: int = 3
    temperature: float = 0.05
    seed: int = 0
    grad_clip: float = 1.0
    image_feature_dim: int = 64
    image_pad_id: int = IMAGE_PAD_ID

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        L, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(L, self.n_heads, self.head_dim).transpose(0, 1)
        k = k.view(L, self.n_heads, self.head_dim).transpose(0, 1)
        v = v.view(L, self.n_heads, self.head_dim).transpose(0, 1)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        mask = torch.triu(
            torch.ones(L, L, dtype=torch.bool, device=x.device), diagonal=1
        )
        att = att.masked_fill(mask, float("-inf"))
        att = F.softmax(att, dim=-1)
        out = (att @ v).transpose(0, 1).reshape(L, -1)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class ToyLM(nn.Module):
    """Pre-LN GPT-style decoder with a linear vision adapter."""

    def __init__(self, config: ToyLMConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.embed_dim)
        self.pos_emb = nn.Parameter(
            0.02 * torch.randn(config.context_len, config.embed_dim)
        )
        self.blocks = nn.ModuleList(
            Block(config.embed_dim, config.n_heads) for _ in range(config.n_layers)
        )
        self.ln_f = nn.LayerNorm(config.embed_dim)
        self.head = nn.Linear(config.embed_dim, config.vocab_size, bias=False)
        self.vision_adapter = nn.Linear(config.image_feature_dim, config.embed_dim)
        self.to(dtype)

    def forward(
        self,
        ids: torch.Tensor,
        image_features: torch.Tensor | None = None,
    ) -> torch.Tensor:
        L = ids.shape[0]
        if L > self.config.context_len:
            raise ContextOverflowError(
                f"stream length {L} exceeds context {self.config.context_len}"
            )
        x = self.tok_emb(ids)
        if image_features is not None:
            pad_positions = (ids == self.config.image_pad_id).nonzero(as_tuple=True)[0]
            if len(pad_positions) != image_features.shape[0]:
                raise FeatureCountMismatchError(
                    f"{image_features.shape[0]} feature vectors for "
                    f"{len(pad_positions)} image placeholders"
                )
            if len(pad_positions):
                fused = self.vision_adapter(image_features.to(x.dtype))
                x = x.index_add(0, pad_positions, fused)
        x = x + self.pos_emb[:L]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


def _as_id_tensor(stream) -> torch.Tensor:
    ids = stream.ids if isinstance(stream, TokenStream) else stream
    return torch.as_tensor(ids, dtype=torch.long)


def _as_feature_tensor(features, dim: int) -> torch.Tensor | None:
    if features is None:
        return None
    if len(features) == 0:
        return torch.zeros((0, dim))
    return torch.as_tensor(np.asarray(features), dtype=torch.get_default_dtype())


def token_nlls(
    model: ToyLM, stream, image_features=None
) -> torch.Tensor:
    """Per-position negative log-likelihoods (predicting positions 2..L)."""
    ids = _as_id_tensor(stream)
    if ids.shape[0] < 2:
        raise ValueError("need at least 2 tokens to score a stream")
    feats = _as_feature_tensor(image_features, model.config.image_feature_dim)
    logits = model(ids, feats)
    return F.cross_entropy(logits[:-1], ids[1:], reduction="none")


def forward_nll(
    model: ToyLM, stream, image_features=None
) -> tuple[float, np.ndarray]:
    """Mean NLL over predicted positions plus the per-token values."""
    with torch.no_grad():
        nlls = token_nlls(model, stream, image_features)
    return float(nlls.mean()), nlls.numpy()


def pair_nll(
    model: ToyLM, pair: PromptResponsePair, image_features=None
) -> torch.Tensor:
    """Stage-2 objective: mean NLL over response positions only."""
    prompt = _as_id_tensor(pair.prompt)
    response = _as_id_tensor(pair.response)
    ids = torch.cat([prompt, response])
    feats = _as_feature_tensor(image_features, model.config.image_feature_dim)
    logits = model(ids, feats)
    p = prompt.shape[0]
    return F.cross_entropy(logits[p - 1 : -1], ids[p:], reduction="mean")


def _check_finite(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"loss became {loss.item()} at {where}")


def train_stage1(
    config: ToyLMConfig,
    corpus: Sequence[TokenStream],
    image_features: Sequence | None = None,
    model: ToyLM | None = None,
) -> tuple[ToyLM, list[float]]:
    """Next-token training over whole streams, batch size 1, fixed order."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    torch.manual_seed(config.seed)
    if model is None:
        model = ToyLM(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.stage1_lr, weight_decay=0.0)
    losses = []
    for epoch in range(config.stage1_epochs):
        total = 0.0
        for i, stream in enumerate(corpus):
            feats = image_features[i] if image_features is not None else None
            loss = token_nlls(model, stream, feats).mean()
            _check_finite(loss, f"stage1 epoch {epoch} stream {i}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            total += loss.item()
        losses.append(total / len(corpus))
    return model, losses


def train_stage2(
    model: ToyLM | None,
    pairs: Sequence[PromptResponsePair],
    config: ToyLMConfig,
    pair_features: Sequence | None = None,
) -> tuple[ToyLM, list[float]]:
    """Response-only fine-tuning; pass model=None to start from scratch."""
    if len(pairs) == 0:
        raise ValueError("no prompt-response pairs")
    torch.manual_seed(config.seed + 1)
    if model is None:
        model = ToyLM(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.stage2_lr, weight_decay=0.0)
    losses = []
    for epoch in range(config.stage2_epochs):
        total = 0.0
        for i, pair in enumerate(pairs):
            feats = pair_features[i] if pair_features is not None else None
            loss = pair_nll(model, pair, feats)
            _check_finite(loss, f"stage2 epoch {epoch} pair {i}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            total += loss.item()
        losses.append(total / len(pairs))
    return model, losses


def generate(
    model: ToyLM,
    prompt,
    task_kind: str,
    vocab: Vocabulary,
    temperature: float | None = None,
    max_new: int = 64,
    seed: int = 0,
    image_features=None,
) -> tuple[int, ...]:
    """Sample new tokens until the task-specific stop rule fires.

    Time prediction stops after four time-byte tokens, type prediction after
    one type token, text generation at the text-end token or max_new.
    """
    if temperature is None:
        temperature = model.config.temperature
    ids = list(prompt.ids if isinstance(prompt, TokenStream) else prompt)
    if len(ids) >= model.config.context_len:
        raise ContextOverflowError("prompt does not fit the context window")
    feats = _as_feature_tensor(image_features, model.config.image_feature_dim)
    gen = torch.Generator().manual_seed(seed)
    new: list[int] = []
    byte_count = 0
    with torch.no_grad():
        while len(new) < max_new and len(ids) < model.config.context_len:
            logits = model(torch.as_tensor(ids, dtype=torch.long), feats)[-1]
            scaled = (logits - logits.max()) / max(temperature, 1e-30)
            probs = F.softmax(scaled.to(torch.float64), dim=-1)
            tok = int(torch.multinomial(probs, 1, generator=gen))
            ids.append(tok)
            new.append(tok)
            if task_kind == "time":
                if vocab.is_time_byte(tok):
                    byte_count += 1
                    if byte_count == 4:
                        break
            elif task_kind == "type":
                if vocab.is_type(tok):
                    break
            elif task_kind == "text":
                if tok == vocab.text_end:
                    break
            else:
                raise ValueError(f"unknown task kind {task_kind!r}")
    return tuple(new)


def patch_features(patch: np.ndarray) -> np.ndarray:
    """Mean-pooled 8x8 downsample of a grayscale patch, scaled to [0, 1]."""
    arr = np.asarray(patch, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    h, w = arr.shape
    if h % 8 or w % 8:
        raise ValueError(f"patch dimensions {arr.shape} must be multiples of 8")
    pooled = arr.reshape(8, h // 8, 8, w // 8).mean(axis=(1, 3))
    return (pooled / 255.0).reshape(64)


def save_checkpoint(model: ToyLM, path: str | Path) -> None:
    """Flat binary tensor file plus a JSON manifest beside it."""
    path = Path(path)
    manifest = {
        "format": "toylm-checkpoint-v1",
        "config": asdict(model.config),
        "seed": model.config.seed,
        "tensors": [],
    }
    blobs = []
    for name, param in model.named_parameters():
        arr = param.detach().numpy()
        code = {"float32": "<f4", "float64": "<f8"}[str(arr.dtype)]
        manifest["tensors"].append(
            {"name": name, "shape": list(arr.shape), "dtype": code}
        )
        blobs.append(arr.astype(code).tobytes())
    path.with_suffix(".json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    path.with_suffix(".bin").write_bytes(b"".join(blobs))


def load_checkpoint(path: str | Path) -> ToyLM:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    config = ToyLMConfig(**manifest["config"])
    dtype = (
        torch.float64
        if manifest["tensors"] and manifest["tensors"][0]["dtype"] == "<f8"
        else torch.float32
    )
    model = ToyLM(config, dtype=dtype)
    raw = path.with_suffix(".bin").read_bytes()
    offset = 0
    with torch.no_grad():
        params = dict(model.named_parameters())
        for spec in manifest["tensors"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arr = np.frombuffer(raw, dtype=spec["dtype"], count=count, offset=offset)
            offset += arr.nbytes
            params[spec["name"]].copy_(
                torch.from_numpy(arr.copy()).reshape(spec["shape"])
            )
    return model
