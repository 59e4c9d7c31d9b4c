"""Audio-only, GSC-only and GeoFusion models on top of :mod:`geoat.autodiff`.

Two desk-scale audio encoders are provided: ``mel_mlp`` (time-pooled Mel
profile into an MLP) and ``patch_transformer`` (ViT-style patches with a
[CLS] token).  The fusion variants are

* ``early_channel`` - GSC projected to a per-frequency prior, broadcast over
  time and stacked as a second input channel;
* ``early_token`` - GSC projected to a dedicated [GSC] token (transformer only);
* ``inter`` - symmetric cross-modal attention between clip embeddings;
* ``late`` - ``z_audio + softplus(lambda_raw) * z_gsc`` in the logit domain.

Parameter initial values are derived from ``(seed, parameter name)``, so two
models built with the same seed share identical audio-path weights.
"""

from __future__ import annotations

import math
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch, WrongBackbone

VARIANTS = ("audio_only", "gsc_only", "early_channel", "early_token", "inter", "late")
BACKBONES = ("mel_mlp", "patch_transformer")
GSC_VARIANTS = ("gsc_only", "early_channel", "early_token", "inter", "late")


@dataclass
class ModelConfig:
    variant: str = "audio_only"
    backbone: str = "mel_mlp"
    n_classes: int = 28
    n_frames: int = 997
    n_mels: int = 64
    d_gsc: int = 768
    # mel_mlp
    mlp_hidden: tuple = (512, 256)
    d_emb: int = 256
    # GSC-only classifier and the late-fusion GSC branch
    gsc_hidden: tuple = (1024, 512)
    # patch_transformer
    patch: tuple = (16, 16)
    tf_dim: int = 128
    tf_layers: int = 2
    tf_heads: int = 4
    tf_ff: int = 256
    # fusion details
    attn_heads: int = 1
    late_init: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.mlp_hidden = tuple(self.mlp_hidden)
        self.gsc_hidden = tuple(self.gsc_hidden)
        self.patch = tuple(self.patch)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; choose from {BACKBONES}")
        if self.variant == "early_token" and self.backbone != "patch_transformer":
            raise WrongBackbone("early_token fusion needs the patch_transformer backbone")
        if self.backbone == "patch_transformer":
            if self.tf_dim % self.tf_heads:
                raise ValueError("tf_dim must be divisible by tf_heads")
            if self.n_patches == 0:
                raise ValueError(f"patch {self.patch} larger than input {self.n_frames}x{self.n_mels}")
        if self.emb_dim % self.attn_heads:
            raise ValueError("embedding dim must be divisible by attn_heads")

    @property
    def uses_gsc(self) -> bool:
        return self.variant in GSC_VARIANTS

    @property
    def emb_dim(self) -> int:
        return self.tf_dim if self.backbone == "patch_transformer" else self.d_emb

    @property
    def patch_grid(self) -> tuple:
        return self.n_frames // self.patch[0], self.n_mels // self.patch[1]

    @property
    def n_patches(self) -> int:
        nt, nf = self.patch_grid
        return nt * nf

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("mlp_hidden", "gsc_hidden", "patch"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


class FusionModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._build()

    # -- parameter registry ------------------------------------------------
    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = ad.parameter(value, name=name)
        self.params[name] = t
        return t

    def _uniform(self, name: str, shape, fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self._param(name, _rng(self.cfg.seed, name).uniform(-bound, bound, size=shape))

    def _linear(self, prefix: str, fan_in: int, fan_out: int, bias: bool = True):
        self._uniform(f"{prefix}.W", (fan_in, fan_out), fan_in)
        if bias:
            self._uniform(f"{prefix}.b", (fan_out,), fan_in)

    def _mlp(self, prefix: str, sizes):
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._linear(f"{prefix}.l{i}", a, b)

    def _build(self):
        c = self.cfg
        v = c.variant
        if v != "gsc_only":
            if c.backbone == "mel_mlp":
                self._build_mel_mlp()
            else:
                self._build_transformer()
            self._linear("head", c.emb_dim, c.n_classes)
        if v == "early_channel":
            # W_proj keeps a random init: with both W_proj and the GSC
            # channel weights at zero neither would ever receive a gradient.
            self._uniform("proj.W", (c.d_gsc, c.n_mels), c.d_gsc)
        elif v == "early_token":
            self._uniform("gsc_token.W", (c.d_gsc, c.tf_dim), c.d_gsc)
        elif v == "inter":
            d = c.emb_dim
            self._mlp("gsc_emb", (c.d_gsc, d, d))
            for side in ("a", "g"):
                for m in ("Wq", "Wk", "Wv"):
                    self._uniform(f"xattn.{side}.{m}", (d, d), d)
            self._linear("fuse", 2 * d, d)
        elif v in ("late", "gsc_only"):
            self._mlp("gsc_head", (c.d_gsc, *c.gsc_hidden, c.n_classes))
            if v == "late":
                self._param("late.lambda_raw", np.full(c.n_classes, float(c.late_init)))

    def _build_mel_mlp(self):
        c = self.cfg
        sizes = (c.n_mels, *c.mlp_hidden, c.d_emb)
        self._mlp("backbone", sizes)
        if c.variant == "early_channel":
            self._param("backbone.l0.W_gsc", np.zeros((c.n_mels, sizes[1])))

    def _build_transformer(self):
        c = self.cfg
        d, pt, pf = c.tf_dim, c.patch[0], c.patch[1]
        self._linear("backbone.patch", pt * pf, d)
        if c.variant == "early_channel":
            self._param("backbone.patch.W_gsc", np.zeros((pt * pf, d)))
        self._param("backbone.cls", _rng(c.seed, "backbone.cls").normal(0, 0.02, (1, 1, d)))
        pos = _rng(c.seed, "backbone.pos").normal(0, 0.02, (1, c.n_patches + 1, d))
        if c.variant == "early_token":
            # new [GSC] row sits right after [CLS] and starts at zero
            pos = np.concatenate([pos[:, :1], np.zeros((1, 1, d)), pos[:, 1:]], axis=1)
        self._param("backbone.pos", pos)
        for i in range(c.tf_layers):
            p = f"backbone.L{i}"
            for ln in ("ln1", "ln2"):
                self._param(f"{p}.{ln}.g", np.ones(d))
                self._param(f"{p}.{ln}.b", np.zeros(d))
            for m in ("q", "k", "v", "o"):
                self._linear(f"{p}.attn.{m}", d, d)
            self._linear(f"{p}.ff1", d, c.tf_ff)
            self._linear(f"{p}.ff2", c.tf_ff, d)
            if c.variant == "early_token":
                self._param(f"{p}.gsc_gate", np.zeros(1))
        self._param("backbone.ln_f.g", np.ones(d))
        self._param("backbone.ln_f.b", np.zeros(d))

    # -- state -------------------------------------------------------------
    def state_dict(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeMismatch(f"{k}: checkpoint {arr.shape} vs model {t.shape}")
            t.data = arr.copy()

    def num_params(self, prefix: str = "") -> int:
        return sum(t.size for k, t in self.params.items() if k.startswith(prefix))

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    # -- forward -------------------------------------------------------------
    def forward(self, A=None, g=None) -> Tensor:
        return _FORWARD[self.cfg.variant](self, A, g)

    __call__ = forward

    def predict_proba(self, A=None, g=None) -> np.ndarray:
        with ad.no_grad():
            return ad.sigmoid(self.forward(A, g)).data


# -- input coercion -------------------------------------------------------------
def _mel_batch(model: FusionModel, A) -> Tensor:
    c = model.cfg
    if A is None:
        raise ShapeMismatch("audio input required")
    if hasattr(A, "frames"):
        A = A.frames
    A = A if isinstance(A, Tensor) else Tensor(np.asarray(A, dtype=np.float64))
    if A.ndim == 2:
        A = A.reshape(1, *A.shape)
    if A.ndim != 3 or A.shape[1:] != (c.n_frames, c.n_mels):
        raise ShapeMismatch(f"expected audio (B, {c.n_frames}, {c.n_mels}), got {A.shape}")
    return A


def _gsc_batch(model: FusionModel, g, batch: Optional[int] = None) -> Tensor:
    c = model.cfg
    if g is None:
        raise ShapeMismatch("GSC input required")
    if hasattr(g, "values"):
        g = g.values
    g = g if isinstance(g, Tensor) else Tensor(np.asarray(g, dtype=np.float64))
    if g.ndim == 1:
        g = g.reshape(1, g.shape[0])
    if g.ndim != 2 or g.shape[1] != c.d_gsc:
        raise ShapeMismatch(f"expected GSC (B, {c.d_gsc}), got {g.shape}")
    if batch is not None and g.shape[0] != batch:
        raise ShapeMismatch(f"audio batch {batch} vs GSC batch {g.shape[0]}")
    return g


# -- building blocks -----------------------------------------------------------------
def _dense(model, prefix, x, W=None):
    W = model.params[f"{prefix}.W"] if W is None else W
    return ad.matmul(x, W) + model.params[f"{prefix}.b"]


def _run_mlp(model, prefix, x, n_layers, final_relu):
    for i in range(n_layers):
        x = _dense(model, f"{prefix}.l{i}", x)
        if i < n_layers - 1 or final_relu:
            x = ad.relu(x)
    return x


def _affine_ln(model, prefix, x):
    return ad.layer_norm(x) * model.params[f"{prefix}.g"] + model.params[f"{prefix}.b"]


def _mel_mlp_embed(model, A: Tensor, gprior: Optional[Tensor] = None) -> Tensor:
    """Time-mean per channel, concatenate channels, MLP to the embedding.

    ``gprior`` is the (B, F) frequency prior of the broadcast GSC channel;
    its time mean is itself, so the broadcast never has to be materialised.
    """
    c = model.cfg
    x = ad.mean(A, axis=1)  # (B, F)
    W = None
    if gprior is not None:
        x = ad.concat([x, gprior], axis=-1)
        W = ad.concat([model.params["backbone.l0.W"], model.params["backbone.l0.W_gsc"]], axis=0)
    x = ad.relu(_dense(model, "backbone.l0", x, W))
    n_layers = len(c.mlp_hidden) + 1
    for i in range(1, n_layers):
        x = ad.relu(_dense(model, f"backbone.l{i}", x))
    return x


def _patchify(model, X: Tensor) -> Tensor:
    """(B, C, T, F) -> (B, n_patches, C*pt*pf) with tail truncation."""
    c = model.cfg
    B, C = X.shape[0], X.shape[1]
    pt, pf = c.patch
    nt, nf = c.patch_grid
    X = X[:, :, : nt * pt, : nf * pf]
    X = X.reshape(B, C, nt, pt, nf, pf)
    X = ad.transpose(X, (0, 2, 4, 1, 3, 5))
    return X.reshape(B, nt * nf, C * pt * pf)


def _heads(x: Tensor, h: int) -> Tensor:
    B, N, D = x.shape
    return ad.transpose(x.reshape(B, N, h, D // h), (0, 2, 1, 3))


def _self_attention(model, prefix, x: Tensor, gated: bool) -> Tensor:
    c = model.cfg
    B, N, D = x.shape
    h = c.tf_heads
    q = _heads(_dense(model, f"{prefix}.q", x), h)
    k = _heads(_dense(model, f"{prefix}.k", x), h)
    v = _heads(_dense(model, f"{prefix}.v", x), h)
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(D // h))
    if gated:
        # Token 1 is [GSC].  Blend attention that ignores it with full attention:
        #   out = masked + gate * (full - masked)
        # gate = 0 at init reproduces the audio-only pathway exactly, while
        # d out / d gate is non-zero so the [GSC] route can be learned.
        full = ad.matmul(ad.softmax(scores), v)
        s_m = ad.concat([scores[..., :1], scores[..., 2:]], axis=-1)
        v_m = ad.concat([v[:, :, :1], v[:, :, 2:]], axis=2)
        masked = ad.matmul(ad.softmax(s_m), v_m)
        gate = model.params[prefix.rsplit(".", 1)[0] + ".gsc_gate"]
        out = masked + gate * (full - masked)
    else:
        out = ad.matmul(ad.softmax(scores), v)
    out = ad.transpose(out, (0, 2, 1, 3)).reshape(B, N, D)
    return _dense(model, f"{prefix}.o", out)


def _transformer_embed(model, X: Tensor, gsc_token: Optional[Tensor] = None,
                       gsc_channel: Optional[Tensor] = None) -> Tensor:
    c = model.cfg
    B = X.shape[0]
    d = c.tf_dim
    patches = _patchify(model, X)
    W = model.params["backbone.patch.W"]
    if gsc_channel is not None:
        patches = ad.concat([patches, _patchify(model, gsc_channel)], axis=-1)
        W = ad.concat([W, model.params["backbone.patch.W_gsc"]], axis=0)
    tokens = _dense(model, "backbone.patch", patches, W)
    cls = ad.broadcast_to(model.params["backbone.cls"], (B, 1, d))
    seq = [cls] if gsc_token is None else [cls, gsc_token.reshape(B, 1, d)]
    x = ad.concat(seq + [tokens], axis=1) + model.params["backbone.pos"]
    gated = gsc_token is not None
    for i in range(c.tf_layers):
        p = f"backbone.L{i}"
        x = x + _self_attention(model, f"{p}.attn", _affine_ln(model, f"{p}.ln1", x), gated)
        hdn = ad.relu(_dense(model, f"{p}.ff1", _affine_ln(model, f"{p}.ln2", x)))
        x = x + _dense(model, f"{p}.ff2", hdn)
    return _affine_ln(model, "backbone.ln_f", x[:, 0, :])


def audio_embedding(model, A) -> Tensor:
    A = _mel_batch(model, A)
    if model.cfg.backbone == "mel_mlp":
        return _mel_mlp_embed(model, A)
    return _transformer_embed(model, A.reshape(A.shape[0], 1, *A.shape[1:]))


# -- the six variants -------------------------------------------------------------------
def forward_audio_only(model, A, g=None) -> Tensor:
    return _dense(model, "head", audio_embedding(model, A))


def forward_gsc_only(model, A=None, g=None) -> Tensor:
    g = _gsc_batch(model, g)
    return _run_mlp(model, "gsc_head", g, len(model.cfg.gsc_hidden) + 1, final_relu=False)


def forward_early_channel(model, A, g) -> Tensor:
    c = model.cfg
    A = _mel_batch(model, A)
    B = A.shape[0]
    g = _gsc_batch(model, g, B)
    gprior = ad.matmul(g, model.params["proj.W"])  # (B, F)
    if c.backbone == "mel_mlp":
        emb = _mel_mlp_embed(model, A, gprior)
    else:
        G = ad.broadcast_to(gprior.reshape(B, 1, 1, c.n_mels), (B, 1, c.n_frames, c.n_mels))
        emb = _transformer_embed(model, A.reshape(B, 1, *A.shape[1:]), gsc_channel=G)
    return _dense(model, "head", emb)


def forward_early_token(model, A, g) -> Tensor:
    if model.cfg.backbone != "patch_transformer":
        raise WrongBackbone("early_token fusion needs the patch_transformer backbone")
    A = _mel_batch(model, A)
    B = A.shape[0]
    g = _gsc_batch(model, g, B)
    token = ad.matmul(g, model.params["gsc_token.W"])
    emb = _transformer_embed(model, A.reshape(B, 1, *A.shape[1:]), gsc_token=token)
    return _dense(model, "head", emb)


def _cross_attend(model, side, query_src: Tensor, context: Tensor) -> Tensor:
    """Attention of one global embedding over the other modality's embedding.

    With a single key the softmax weight is exactly 1; kept explicit so the
    computation matches the general formula.
    """
    B, D = query_src.shape
    h = model.cfg.attn_heads
    dh = D // h
    q = ad.matmul(query_src, model.params[f"xattn.{side}.Wq"]).reshape(B, h, 1, dh)
    k = ad.matmul(context, model.params[f"xattn.{side}.Wk"]).reshape(B, h, 1, dh)
    v = ad.matmul(context, model.params[f"xattn.{side}.Wv"]).reshape(B, h, 1, dh)
    w = ad.softmax(ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh)))
    return ad.matmul(w, v).reshape(B, D)


def inter_fused_embedding(model, A, g) -> Tensor:
    e_audio = audio_embedding(model, A)
    g = _gsc_batch(model, g, e_audio.shape[0])
    e_gsc = _run_mlp(model, "gsc_emb", g, 2, final_relu=False)
    refined_audio = e_audio + _cross_attend(model, "a", e_audio, e_gsc)
    refined_gsc = e_gsc + _cross_attend(model, "g", e_gsc, e_audio)
    stream1 = refined_audio + e_gsc
    stream2 = refined_gsc + e_audio
    return _dense(model, "fuse", ad.concat([stream1, stream2], axis=-1))


def forward_inter(model, A, g) -> Tensor:
    return _dense(model, "head", inter_fused_embedding(model, A, g))


def late_branches(model, A, g) -> tuple:
    z_audio = forward_audio_only(model, A)
    z_gsc = forward_gsc_only(model, None, _gsc_batch(model, g, z_audio.shape[0]))
    return z_audio, z_gsc


def forward_late(model, A, g) -> Tensor:
    z_audio, z_gsc = late_branches(model, A, g)
    lam = ad.softplus(model.params["late.lambda_raw"])
    return z_audio + lam * z_gsc


_FORWARD = {
    "audio_only": forward_audio_only,
    "gsc_only": forward_gsc_only,
    "early_channel": forward_early_channel,
    "early_token": forward_early_token,
    "inter": forward_inter,
    "late": forward_late,
}


def build_model(variant: str = "audio_only", **kwargs) -> FusionModel:
    return FusionModel(ModelConfig(variant=variant, **kwargs))


def gsc_only_param_count(d_gsc: int = 768, hidden=(1024, 512), n_classes: int = 28) -> int:
    sizes = (d_gsc, *hidden, n_classes)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
