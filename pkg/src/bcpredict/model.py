"""The backchannel classifier: acoustic CNN, behavior embeddings, SLI encoders.

Parameters live in a flat ``dict[str, ndarray]`` so the optimizer, the
checkpoint writer and the gradient checker can all walk them uniformly.
Only the tensors a variant actually uses are created.

Forward pass for a batch::

    window --conv--> relu/maxpool --flatten--> acoustic vector a
    speaker id  --table--> ffn1 --> ffn2 --> s
    listener id --table--> ffn1 --> ffn2 --> l
    concat(a, variant-specific vectors) --dropout--> [tanh fusion] --> affine --> softmax
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, DimensionMismatch, MissingInput, UnknownInterlocutor
from .numerics import kernels
from .numerics.ops import check_conv_shapes, pooled_length, softmax, softmax_xent_batch, tanh_backward

N_CLASSES = 3


class Variant(str, enum.Enum):
    AC = "AC"
    AC_S = "AC_S"
    AC_L = "AC_L"
    AC_S_L = "AC_S_L"
    AC_SLI_SUM = "AC_SLI_SUM"
    AC_SLI_BILINEAR = "AC_SLI_BILINEAR"
    AC_SLI_NTN = "AC_SLI_NTN"

    @property
    def uses_speaker(self) -> bool:
        return self is not Variant.AC and self is not Variant.AC_L

    @property
    def uses_listener(self) -> bool:
        return self is not Variant.AC and self is not Variant.AC_S

    @property
    def sli(self) -> str | None:
        return self.value[len("AC_SLI_"):].lower() if self.value.startswith("AC_SLI_") else None

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().upper().replace("⊕", "_").replace("+", "_").replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}") from None


@dataclass
class ModelConfig:
    variant: str = "AC"
    n_frames: int = 48
    n_coeffs: int = 13
    filter_widths: tuple = (10,)
    n_filters: int = 16
    pool_rows: int = 10
    embedding_len: int = 5
    ffn_hidden: int = 5
    ffn_activation: str = "tanh"  # or "linear"
    sli_slices: int = 5  # k
    sli_out: int = 5  # m; 1 reproduces the scalar NTN score
    fusion_hidden: int = 32  # 0 = concatenation feeds the softmax layer directly
    dropout: float = 0.1

    def __post_init__(self):
        self.variant = Variant.parse(getattr(self.variant, "value", self.variant)).value
        self.filter_widths = tuple(int(w) for w in self.filter_widths)
        if self.ffn_activation not in ("tanh", "linear"):
            raise ValueError(f"ffn_activation must be tanh or linear, got {self.ffn_activation!r}")
        for w in self.filter_widths:
            if w < 1 or w > self.n_frames:
                raise ValueError(f"filter width {w} does not fit {self.n_frames} frames")

    @property
    def var(self) -> Variant:
        return Variant(self.variant)

    def acoustic_dim(self) -> int:
        return sum(self.n_filters * pooled_length(self.n_frames, w, self.pool_rows)
                   for w in self.filter_widths)

    def side_dim(self) -> int:
        v, e = self.var, self.embedding_len
        return {
            Variant.AC: 0, Variant.AC_S: e, Variant.AC_L: e, Variant.AC_S_L: 2 * e,
            Variant.AC_SLI_SUM: e, Variant.AC_SLI_BILINEAR: self.sli_slices,
            Variant.AC_SLI_NTN: self.sli_out,
        }[v]


def glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


# -- small differentiable pieces ------------------------------------------------------

def sli_sum(s, l):
    s, l = np.asarray(s, dtype=np.float64), np.asarray(l, dtype=np.float64)
    if s.shape != l.shape:
        raise DimensionMismatch(f"speaker {s.shape} vs listener {l.shape}")
    return s + l


def _check_pair(s, l, W):
    s, l = np.asarray(s, dtype=np.float64), np.asarray(l, dtype=np.float64)
    if s.shape[-1] != W.shape[0] or l.shape[-1] != W.shape[1]:
        raise DimensionMismatch(f"embeddings {s.shape[-1]}/{l.shape[-1]} vs W {W.shape[:2]}")
    return s, l


def sli_bilinear(s, l, W, b):
    """Component j is s^T W[:, :, j] l + b[j]; W has shape (n, n, k)."""
    s, l = _check_pair(s, l, W)
    return np.einsum("...p,pqj,...q->...j", s, W, l) + b


def sli_ntn(s, l, W, V, U, b):
    """U^T tanh(s^T W^[1:k] l + V [s; l]) + b with V (k, 2n) and U (k, m)."""
    s, l = _check_pair(s, l, W)
    if V.shape != (W.shape[2], s.shape[-1] + l.shape[-1]):
        raise DimensionMismatch(f"V shape {V.shape}")
    z = np.einsum("...p,pqj,...q->...j", s, W, l) + np.concatenate([s, l], axis=-1) @ V.T
    return np.tanh(z) @ U + b


# -- model ----------------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray  # (B, frames, coeffs)
    speaker: np.ndarray | None = None  # (B,) int indices
    listener: np.ndarray | None = None
    y: np.ndarray | None = None  # (B,) class indices

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx) -> "Batch":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Batch(self.x[idx], pick(self.speaker), pick(self.listener), pick(self.y))


class BCModel:
    """Classifier over {NO_BC, YEAH, UH_HUH} for one configured variant."""

    def __init__(self, config: ModelConfig, interlocutors: Sequence[str] = (),
                 listeners: Sequence[str] | None = None, seed: int = 0):
        self.config = config
        self.interlocutors = sorted(set(interlocutors))
        self.listeners = sorted(set(listeners)) if listeners is not None else list(self.interlocutors)
        self.index = {name: i for i, name in enumerate(self.interlocutors)}
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(np.random.SeedSequence([seed, 0x1417])))

    # ---- parameters ----
    def _init_params(self, rng):
        c, v = self.config, self.config.var
        p = self.params
        for w in c.filter_widths:
            p[f"conv{w}.W"] = glorot(rng, w * c.n_coeffs, c.n_filters, (c.n_filters, w, c.n_coeffs))
            p[f"conv{w}.b"] = np.zeros(c.n_filters)
        n_ids, e, h = max(len(self.interlocutors), 1), c.embedding_len, c.ffn_hidden
        for prefix, used in (("spk", v.uses_speaker), ("lst", v.uses_listener)):
            if not used:
                continue
            p[f"{prefix}.table"] = rng.uniform(-0.1, 0.1, size=(n_ids, e))
            p[f"{prefix}.ffn1.W"] = glorot(rng, e, h, (e, h))
            p[f"{prefix}.ffn1.b"] = np.zeros(h)
            p[f"{prefix}.ffn2.W"] = glorot(rng, h, e, (h, e))
            p[f"{prefix}.ffn2.b"] = np.zeros(e)
        k, m = c.sli_slices, c.sli_out
        if v.sli == "bilinear":
            p["sli.W"] = glorot(rng, e * e, k, (e, e, k))
            p["sli.b"] = np.zeros(k)
        elif v.sli == "ntn":
            p["sli.W"] = glorot(rng, e * e, k, (e, e, k))
            p["sli.V"] = glorot(rng, 2 * e, k, (k, 2 * e))
            p["sli.U"] = glorot(rng, k, m, (k, m))
            p["sli.b"] = np.zeros(m)
        d_in = c.acoustic_dim() + c.side_dim()
        if c.fusion_hidden:
            p["fuse.W"] = glorot(rng, d_in, c.fusion_hidden, (d_in, c.fusion_hidden))
            p["fuse.b"] = np.zeros(c.fusion_hidden)
            d_in = c.fusion_hidden
        p["out.W"] = glorot(rng, d_in, N_CLASSES, (d_in, N_CLASSES))
        p["out.b"] = np.zeros(N_CLASSES)

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # ---- id handling ----
    def ids_to_index(self, ids, role: str) -> np.ndarray:
        try:
            return np.array([self.index[i] for i in ids], dtype=np.intp)
        except KeyError as exc:
            raise UnknownInterlocutor(f"unknown {role} id {exc.args[0]!r}") from None

    # ---- forward pieces ----
    def acoustic(self, x):
        """Flattened pooled feature map per window, plus the backward cache."""
        c = self.config
        feats, caches = [], []
        for w in c.filter_widths:
            W, b = self.params[f"conv{w}.W"], self.params[f"conv{w}.b"]
            check_conv_shapes(x.shape[1], x.shape[2], W)
            fmap = kernels.conv_forward(x, W, b)
            pooled, arg = kernels.relu_maxpool_forward(fmap, c.pool_rows)
            # per-filter concatenation: (B, P, F) -> (B, F, P) -> (B, F*P)
            feats.append(pooled.transpose(0, 2, 1).reshape(len(x), -1))
            caches.append((w, fmap.shape[1], pooled, arg))
        return np.concatenate(feats, axis=1), caches

    def _act(self, z):
        return np.tanh(z) if self.config.ffn_activation == "tanh" else z

    def behavior(self, prefix, idx):
        p = self.params
        e = p[f"{prefix}.table"][idx]
        h1 = self._act(e @ p[f"{prefix}.ffn1.W"] + p[f"{prefix}.ffn1.b"])
        h2 = self._act(h1 @ p[f"{prefix}.ffn2.W"] + p[f"{prefix}.ffn2.b"])
        return h2, (idx, e, h1, h2)

    def behavior_encode(self, interlocutor: str, role: str = "listener") -> np.ndarray:
        prefix = "lst" if role == "listener" else "spk"
        if f"{prefix}.table" not in self.params:
            raise MissingInput(f"variant {self.config.variant} has no {role} embedding")
        return self.behavior(prefix, self.ids_to_index([interlocutor], role))[0][0]

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None):
        """Class probabilities (B, 3) and a cache for ``backward``."""
        c, v, p = self.config, self.config.var, self.params
        x = np.asarray(batch.x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != c.n_coeffs:
            raise DimensionMismatch(f"windows must be (B, frames, {c.n_coeffs}), got {x.shape}")
        if v.uses_speaker and batch.speaker is None:
            raise MissingInput(f"variant {v.value} needs speaker ids")
        if v.uses_listener and batch.listener is None:
            raise MissingInput(f"variant {v.value} needs listener ids")
        cache = {"x": x}
        a, cache["ac"] = self.acoustic(x)
        parts = [a]
        if v.uses_speaker:
            s, cache["spk"] = self.behavior("spk", batch.speaker)
        if v.uses_listener:
            l, cache["lst"] = self.behavior("lst", batch.listener)
        if v in (Variant.AC_S, Variant.AC_S_L):
            parts.append(s)
        if v in (Variant.AC_L, Variant.AC_S_L):
            parts.append(l)
        if v.sli == "sum":
            parts.append(s + l)
        elif v.sli == "bilinear":
            parts.append(sli_bilinear(s, l, p["sli.W"], p["sli.b"]))
        elif v.sli == "ntn":
            z = np.einsum("bp,pqj,bq->bj", s, p["sli.W"], l) + np.concatenate([s, l], axis=1) @ p["sli.V"].T
            t = np.tanh(z)
            cache["ntn_t"] = t
            parts.append(t @ p["sli.U"] + p["sli.b"])
        h = np.concatenate(parts, axis=1)
        cache["widths"] = [q.shape[1] for q in parts]
        if train and c.dropout > 0:
            if rng is None:
                raise ValueError("train-mode forward needs a generator for dropout")
            mask = (rng.random(h.shape) >= c.dropout) / (1.0 - c.dropout)
            h = h * mask
            cache["mask"] = mask
        cache["h"] = h
        if c.fusion_hidden:
            f = np.tanh(h @ p["fuse.W"] + p["fuse.b"])
            cache["f"] = f
            h = f
        logits = h @ p["out.W"] + p["out.b"]
        cache["logits"] = logits
        return softmax(logits), cache

    def backward(self, cache, glogits) -> dict[str, np.ndarray]:
        c, v, p = self.config, self.config.var, self.params
        g = self.zero_grads()
        top = cache["f"] if c.fusion_hidden else cache["h"]
        g["out.W"] = top.T @ glogits
        g["out.b"] = glogits.sum(axis=0)
        gh = glogits @ p["out.W"].T
        if c.fusion_hidden:
            gz = tanh_backward(cache["f"], gh)
            g["fuse.W"] = cache["h"].T @ gz
            g["fuse.b"] = gz.sum(axis=0)
            gh = gz @ p["fuse.W"].T
        if "mask" in cache:
            gh = gh * cache["mask"]
        pieces = np.split(gh, np.cumsum(cache["widths"])[:-1], axis=1)
        ga, rest = pieces[0], pieces[1:]
        gs = gl = None
        if v is Variant.AC_S:
            gs = rest[0]
        elif v is Variant.AC_L:
            gl = rest[0]
        elif v is Variant.AC_S_L:
            gs, gl = rest
        elif v.sli == "sum":
            gs = gl = rest[0]
        elif v.sli == "bilinear":
            gy = rest[0]
            s, l = cache["spk"][3], cache["lst"][3]
            g["sli.W"] = np.einsum("bp,bq,bj->pqj", s, l, gy)
            g["sli.b"] = gy.sum(axis=0)
            gs = np.einsum("pqj,bq,bj->bp", p["sli.W"], l, gy)
            gl = np.einsum("bp,pqj,bj->bq", s, p["sli.W"], gy)
        elif v.sli == "ntn":
            gy = rest[0]
            s, l, t = cache["spk"][3], cache["lst"][3], cache["ntn_t"]
            g["sli.U"] = t.T @ gy
            g["sli.b"] = gy.sum(axis=0)
            gz = tanh_backward(t, gy @ p["sli.U"].T)
            g["sli.W"] = np.einsum("bp,bq,bj->pqj", s, l, gz)
            g["sli.V"] = gz.T @ np.concatenate([s, l], axis=1)
            gsl = gz @ p["sli.V"]
            n = s.shape[1]
            gs = np.einsum("pqj,bq,bj->bp", p["sli.W"], l, gz) + gsl[:, :n]
            gl = np.einsum("bp,pqj,bj->bq", s, p["sli.W"], gz) + gsl[:, n:]
        if gs is not None:
            self._behavior_backward("spk", cache["spk"], gs, g)
        if gl is not None:
            self._behavior_backward("lst", cache["lst"], gl, g)
        self._acoustic_backward(cache, ga, g)
        return g

    def _behavior_backward(self, prefix, cache, gout, g):
        p = self.params
        idx, e, h1, h2 = cache
        dact = (lambda y, gy: tanh_backward(y, gy)) if self.config.ffn_activation == "tanh" else (lambda y, gy: gy)
        g2 = dact(h2, gout)
        g[f"{prefix}.ffn2.W"] += h1.T @ g2
        g[f"{prefix}.ffn2.b"] += g2.sum(axis=0)
        g1 = dact(h1, g2 @ p[f"{prefix}.ffn2.W"].T)
        g[f"{prefix}.ffn1.W"] += e.T @ g1
        g[f"{prefix}.ffn1.b"] += g1.sum(axis=0)
        np.add.at(g[f"{prefix}.table"], idx, g1 @ p[f"{prefix}.ffn1.W"].T)

    def _acoustic_backward(self, cache, ga, g):
        x = cache["x"]
        B = len(x)
        off = 0
        for (w, rows, pooled, arg) in cache["ac"]:
            P, F = pooled.shape[1], pooled.shape[2]
            gp = ga[:, off:off + F * P].reshape(B, F, P).transpose(0, 2, 1)
            off += F * P
            gm = kernels.relu_maxpool_backward(gp, pooled, arg, rows)
            _, dW, db = kernels.conv_backward(x, self.params[f"conv{w}.W"], gm)
            g[f"conv{w}.W"] += dW
            g[f"conv{w}.b"] += db

    def loss_and_grads(self, batch: Batch, train: bool = False, rng=None):
        probs, cache = self.forward(batch, train=train, rng=rng)
        loss, _, glogits = softmax_xent_batch(cache["logits"], batch.y)
        return loss, self.backward(cache, glogits), probs

    # ---- convenience ----
    def predict_proba(self, batch: Batch) -> np.ndarray:
        return self.forward(batch)[0]

    def predict(self, batch: Batch) -> np.ndarray:
        return self.predict_proba(batch).argmax(axis=1)  # ties -> lowest class index

    def predict_one(self, window, speaker_id: str | None = None, listener_id: str | None = None):
        v = self.config.var
        if v.uses_speaker and speaker_id is None:
            raise MissingInput(f"variant {v.value} needs a speaker id")
        if v.uses_listener and listener_id is None:
            raise MissingInput(f"variant {v.value} needs a listener id")
        batch = Batch(
            np.asarray(window, dtype=np.float64)[None],
            self.ids_to_index([speaker_id], "speaker") if v.uses_speaker else None,
            self.ids_to_index([listener_id], "listener") if v.uses_listener else None)
        return self.predict_proba(batch)[0]

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params):
        for k in self.params:
            self.params[k][...] = params[k]

    # ---- checkpoints ----
    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self, extra)

    @classmethod
    def load(cls, path) -> "BCModel":
        return load_checkpoint(path)[0]


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


CKPT_MAGIC = b"BCCK"
CKPT_VERSION = 1


def save_checkpoint(path, model: BCModel, extra: dict | None = None) -> None:
    """Header JSON (config, variant, seed, ids, tensor shapes) then f64 tensors."""
    tensors = [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()]
    header = {
        "variant": model.config.variant,
        "config": asdict(model.config),
        "seed": model.seed,
        "interlocutors": model.interlocutors,
        "listeners": model.listeners,
        "tensors": tensors,
        "extra": extra or {},
    }
    header["config_hash"] = config_hash(header["config"])
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(hb)), hb]
    parts += [np.ascontiguousarray(model.params[t["name"]], dtype="<f8").tobytes() for t in tensors]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    off = 10
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    cfg = header["config"]
    cfg["filter_widths"] = tuple(cfg["filter_widths"])
    model = BCModel(ModelConfig(**cfg), header["interlocutors"], header["listeners"], header["seed"])
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        if off + 8 * n > len(data):
            raise CheckpointError(f"{path}: truncated at tensor {t['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(t["shape"])
        off += 8 * n
        if t["name"] not in model.params or model.params[t["name"]].shape != arr.shape:
            raise CheckpointError(f"{path}: unexpected tensor {t['name']} {t['shape']}")
        model.params[t["name"]][...] = arr
    return model, header
