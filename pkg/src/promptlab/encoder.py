"""Miniature CLIP-style dual encoder with deep prompt injection.

The image tower is a pre-LN ViT over non-overlapping patches with a learned
class token; the text tower is the same transformer over token embeddings.
Both map into a shared ``embed_dim`` space through a final projection.

Learnable prompts (:class:`PromptSet`) are prepended after the class token at
each of the first ``prompt_depth`` layers. At layer 0 they are inserted; at
deeper prompted layers the previous layer's prompt outputs are replaced by
fresh tokens. After the last prompted layer the prompt outputs simply flow
through the remaining blocks. Pooling always reads the class token, so the
prompts never reach the pooled features directly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DegenerateVectorError, InvalidInputError, InvalidParameterError

CHECKPOINT_VERSION = 1
PIXEL_MEAN = 0.25
PIXEL_STD = 0.3


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    patch_size: int = 4
    image_size: int = 32
    channels: int = 3
    vocab_size: int = 64
    max_text_len: int = 8
    temperature: float = 0.07
    prompt_depth: int = 2
    mlp_ratio: int = 2
    n_visual_prompts: int = 4
    n_text_prompts: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise InvalidParameterError("image_size must be divisible by patch_size")
        if self.embed_dim % self.heads:
            raise InvalidParameterError("embed_dim must be divisible by heads")
        if not 0 <= self.prompt_depth <= self.layers:
            raise InvalidParameterError("prompt_depth must lie in [0, layers]")
        if self.temperature <= 0:
            raise InvalidParameterError("temperature must be positive")
        if self.n_visual_prompts < 0 or self.n_text_prompts < 0:
            raise InvalidParameterError("prompt counts must be non-negative")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2


@dataclass
class PromptSet:
    """Per-layer visual and textual prompt tokens (``prompt_depth`` entries each)."""

    visual: list[Tensor]
    textual: list[Tensor]

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator, n_visual=None, n_text=None, std: float = 0.02):
        k = config.n_visual_prompts if n_visual is None else n_visual
        l = config.n_text_prompts if n_text is None else n_text
        d = config.embed_dim
        visual = [Tensor(rng.normal(0.0, std, (k, d)), requires_grad=True) for _ in range(config.prompt_depth)]
        textual = [Tensor(rng.normal(0.0, std, (l, d)), requires_grad=True) for _ in range(config.prompt_depth)]
        return cls(visual, textual)

    @classmethod
    def empty(cls, config: ModelConfig):
        return cls.init(config, np.random.default_rng(0), n_visual=0, n_text=0)

    @property
    def n_visual(self) -> int:
        return self.visual[0].shape[0] if self.visual else 0

    @property
    def n_text(self) -> int:
        return self.textual[0].shape[0] if self.textual else 0

    def parameters(self) -> list[Tensor]:
        return [p for p in self.visual + self.textual if p.size]

    def copy(self) -> PromptSet:
        return PromptSet(
            [Tensor(p.data.copy(), requires_grad=p.requires_grad) for p in self.visual],
            [Tensor(p.data.copy(), requires_grad=p.requires_grad) for p in self.textual],
        )

    def state(self) -> dict[str, np.ndarray]:
        out = {f"visual/{i}": p.data for i, p in enumerate(self.visual)}
        out.update({f"textual/{i}": p.data for i, p in enumerate(self.textual)})
        return out


@dataclass
class FeatureStack:
    """Output of one image-encoder pass over a batch.

    ``layer_features[i]`` is the projected class token after block ``i`` (B x d);
    ``embedding`` is the final one. ``attention[i]`` holds the block's
    attention probabilities, shape (B, heads, tokens, tokens).
    """

    layer_features: list[Tensor]
    attention: list[np.ndarray] = field(repr=False)
    n_prompts: int = 0

    @property
    def embedding(self) -> Tensor:
        return self.layer_features[-1]


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, S, S) -> (B, (S/p)^2, C*p*p), patches in row-major grid order."""
    b, c, s, _ = images.shape
    g = s // patch
    x = images.reshape(b, c, g, patch, g, patch)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * patch * patch)


class DualEncoder:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = config
        self.frozen = False
        self.params: dict[str, Tensor] = {}
        self._init_params(rng)

    # ------------------------------------------------------------ parameters
    def _init_params(self, rng):
        c = self.config
        d, m = c.embed_dim, c.embed_dim * c.mlp_ratio
        out_scale = 1.0 / np.sqrt(2 * c.layers)

        def add(name, arr):
            self.params[name] = Tensor(arr, requires_grad=True)

        def dense(fan_in, fan_out, scale=1.0):
            return rng.normal(0.0, scale / np.sqrt(fan_in), (fan_in, fan_out))

        for tower in ("img", "txt"):
            if tower == "img":
                add("img.patch_w", dense(c.patch_dim, d))
                add("img.patch_b", np.zeros(d))
                add("img.pos", rng.normal(0.0, 0.02, (1 + c.n_patches, d)))
            else:
                add("txt.tok", rng.normal(0.0, 1.0, (c.vocab_size, d)))
                add("txt.pos", rng.normal(0.0, 0.02, (1 + c.max_text_len, d)))
            add(f"{tower}.cls", rng.normal(0.0, 0.02, (d,)))
            for layer in range(c.layers):
                pre = f"{tower}.{layer}."
                add(pre + "ln1_g", np.ones(d))
                add(pre + "ln1_b", np.zeros(d))
                for proj in ("q", "k", "v"):
                    add(pre + f"{proj}_w", dense(d, d))
                    add(pre + f"{proj}_b", np.zeros(d))
                add(pre + "o_w", dense(d, d, out_scale))
                add(pre + "o_b", np.zeros(d))
                add(pre + "ln2_g", np.ones(d))
                add(pre + "ln2_b", np.zeros(d))
                add(pre + "fc1_w", dense(d, m))
                add(pre + "fc1_b", np.zeros(m))
                add(pre + "fc2_w", dense(m, d, out_scale))
                add(pre + "fc2_b", np.zeros(d))
            add(f"{tower}.lnf_g", np.ones(d))
            add(f"{tower}.lnf_b", np.zeros(d))
            add(f"{tower}.proj", dense(d, d))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def freeze(self) -> DualEncoder:
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def copy(self) -> DualEncoder:
        clone = DualEncoder.__new__(DualEncoder)
        clone.config = self.config
        clone.frozen = self.frozen
        clone.params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.params.items()}
        return clone

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].data.tobytes())
        return h.hexdigest()

    # ---------------------------------------------------------- transformer
    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        lead = x.shape[:-1]
        flat = ag.reshape(x, (-1, x.shape[-1]))
        out = flat @ self.params[w] + self.params[b]
        return ag.reshape(out, lead + (out.shape[-1],))

    def _block(self, pre: str, x: Tensor) -> tuple[Tensor, np.ndarray]:
        p = self.params
        b, t, d = x.shape
        h = self.config.heads
        y = ag.layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])

        def heads(name):
            z = self._linear(y, pre + f"{name}_w", pre + f"{name}_b")
            return ag.transpose(ag.reshape(z, (b, t, h, d // h)), (0, 2, 1, 3))

        ctx, probs = ag.attention(heads("q"), heads("k"), heads("v"))
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        x = x + self._linear(ctx, pre + "o_w", pre + "o_b")
        y = ag.layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
        y = ag.gelu(self._linear(y, pre + "fc1_w", pre + "fc1_b"))
        return x + self._linear(y, pre + "fc2_w", pre + "fc2_b"), probs

    def _pool(self, tower: str, x: Tensor) -> Tensor:
        p = self.params
        cls = ag.layer_norm(x[:, 0, :], p[f"{tower}.lnf_g"], p[f"{tower}.lnf_b"])
        return cls @ p[f"{tower}.proj"]

    def _run(self, tower: str, x: Tensor, prompts: list[Tensor] | None, keep_all: bool):
        """Run the blocks of one tower, injecting prompts; return per-layer pooled features."""
        c = self.config
        b = x.shape[0]
        n_prev = 0
        feats, maps = [], []
        for layer in range(c.layers):
            if prompts and layer < len(prompts) and prompts[layer].shape[0] > 0:
                k = prompts[layer].shape[0]
                tok = ag.broadcast_to(ag.reshape(prompts[layer], (1, k, c.embed_dim)), (b, k, c.embed_dim))
                x = ag.concat([x[:, :1], tok, x[:, 1 + n_prev :]], axis=1)
                n_prev = k
            x, probs = self._block(f"{tower}.{layer}.", x)
            maps.append(probs)
            if keep_all or layer == c.layers - 1:
                feats.append(self._pool(tower, x))
        return feats, maps, n_prev

    # ----------------------------------------------------------- public API
    def encode_image(self, images, prompts: PromptSet | None = None) -> FeatureStack:
        c = self.config
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        if images.ndim != 4 or images.shape[1:] != (c.channels, c.image_size, c.image_size):
            raise InvalidInputError(
                f"expected images of shape (B, {c.channels}, {c.image_size}, {c.image_size}), got {images.shape}"
            )
        p = self.params
        b = images.shape[0]
        patches = Tensor(patchify((images - PIXEL_MEAN) / PIXEL_STD, c.patch_size))
        x = self._linear(patches, "img.patch_w", "img.patch_b")
        cls = ag.broadcast_to(ag.reshape(p["img.cls"], (1, 1, c.embed_dim)), (b, 1, c.embed_dim))
        x = ag.concat([cls, x], axis=1) + p["img.pos"]
        feats, maps, n_prompts = self._run("img", x, prompts.visual if prompts else None, keep_all=True)
        return FeatureStack(feats, maps, n_prompts)

    def encode_text(self, tokens, prompts: PromptSet | None = None) -> Tensor:
        """Embed a batch of equal-length token sequences, shape (N, len) -> (N, d)."""
        c = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.ndim != 2 or not np.issubdtype(tokens.dtype, np.integer):
            raise InvalidInputError("tokens must be a 2-D integer array")
        if tokens.shape[1] > c.max_text_len:
            raise InvalidInputError(f"text longer than max_text_len={c.max_text_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= c.vocab_size):
            raise InvalidInputError("unknown token id")
        p = self.params
        n, length = tokens.shape
        emb = p["txt.tok"][tokens]
        cls = ag.broadcast_to(ag.reshape(p["txt.cls"], (1, 1, c.embed_dim)), (n, 1, c.embed_dim))
        x = ag.concat([cls, emb], axis=1) + p["txt.pos"][: 1 + length]
        feats, _, _ = self._run("txt", x, prompts.textual if prompts else None, keep_all=False)
        return feats[-1]

    def class_embeddings(self, class_tokens, prompts: PromptSet | None = None) -> Tensor:
        return self.encode_text(class_tokens, prompts)


def predict(z, class_emb, temperature: float) -> Tensor:
    """Class probabilities from cosine similarity between image and class embeddings."""
    z, v = ag.as_tensor(z), ag.as_tensor(class_emb)
    if v.ndim != 2 or v.shape[0] < 1:
        raise InvalidInputError("class embeddings must be a non-empty (N, d) matrix")
    if np.any(np.linalg.norm(v.data, axis=1) == 0):
        raise DegenerateVectorError("zero-norm class embedding")
    single = z.ndim == 1
    if single:
        z = ag.reshape(z, (1, -1))
    sims = ag.normalize(z) @ ag.transpose(ag.normalize(v))
    p = ag.softmax(sims, temperature=temperature)
    return ag.reshape(p, (-1,)) if single else p


def cross_entropy_loss(probs, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels."""
    probs = ag.as_tensor(probs)
    labels = np.asarray(labels)
    if probs.ndim == 1:
        probs = ag.reshape(probs, (1, -1))
        labels = labels.reshape(1)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise InvalidInputError("probs must be (B, N) with one label per row")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InvalidInputError("label out of range")
    picked = probs[np.arange(len(labels)), labels]
    return -ag.mean(ag.log(ag.clip_min(picked, 1e-300)))


# ------------------------------------------------------------- checkpoints
def save_checkpoint(path, model: DualEncoder, prompts: PromptSet | None = None, extra: dict | None = None) -> Path:
    """Write config + named flat arrays to a ``.npz`` container."""
    path = Path(path)
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(model.config), "frozen": model.frozen, "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    if prompts is not None:
        arrays.update({f"prompt/{k}": v for k, v in prompts.state().items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[DualEncoder, PromptSet | None, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig(**meta["config"])
        model = DualEncoder(config, rng=0)
        for name, tensor in model.params.items():
            key = f"param/{name}"
            if key not in data:
                raise InvalidInputError(f"checkpoint is missing {name}")
            if data[key].shape != tensor.shape:
                raise InvalidInputError(f"{name}: expected shape {tensor.shape}, found {data[key].shape}")
            tensor.data = data[key].astype(np.float64)
        prompts = None
        if any(k.startswith("prompt/") for k in data.files):
            visual = [Tensor(data[f"prompt/visual/{i}"], requires_grad=True) for i in range(config.prompt_depth)]
            textual = [Tensor(data[f"prompt/textual/{i}"], requires_grad=True) for i in range(config.prompt_depth)]
            for t in visual + textual:
                if t.ndim != 2 or t.shape[1] != config.embed_dim:
                    raise InvalidInputError("prompt token width does not match embed_dim")
            prompts = PromptSet(visual, textual)
    if meta.get("frozen"):
        model.freeze()
    return model, prompts, meta.get("extra", {})
