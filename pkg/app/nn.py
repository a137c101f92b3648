"""
Dense numpy kernel for the attention policy.

Each layer reads its tensors from a shared ParamStore by name and has a
forward pass returning (output, cache) and a backward pass that takes the
cache plus the output gradient, accumulates parameter gradients into the
store and returns the input gradient. Caches are plain tuples, so one layer
may run many forward passes before any backward pass.
"""

import json
import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.config import AttentionConfig
from app.errors import ConfigError, ShapeError

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"CNCL"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named parameter tensors with one gradient buffer each."""

    def __init__(self, values: Dict[str, np.ndarray]):
        self.values = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> List[str]:
        return list(self.values)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.values.items()})

    def load_values(self, other: "ParamStore"):
        for k, v in other.values.items():
            self.values[k][...] = v


# --- LAYERS ---


class Linear:
    """y = x W + b"""

    def __init__(self, params: ParamStore, prefix: str):
        self.p = params
        self.w = f"{prefix}.weight"
        self.b = f"{prefix}.bias"

    def forward(self, x: np.ndarray):
        W = self.p[self.w]
        if x.shape[-1] != W.shape[0]:
            raise ShapeError(f"{self.w}: input width {x.shape[-1]} != {W.shape[0]}")
        return x @ W + self.p[self.b], x

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        self.p.grads[self.w] += x.T @ dy
        self.p.grads[self.b] += dy.sum(axis=0)
        return dy @ self.p[self.w].T


class LayerNorm:
    def __init__(self, params: ParamStore, prefix: str):
        self.p = params
        self.gain = f"{prefix}.gain"
        self.bias = f"{prefix}.bias"

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (x - mu) * inv_std
        return xhat * self.p[self.gain] + self.p[self.bias], (xhat, inv_std)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std = cache
        self.p.grads[self.gain] += (dy * xhat).sum(axis=0)
        self.p.grads[self.bias] += dy.sum(axis=0)
        dxhat = dy * self.p[self.gain]
        d = xhat.shape[1]
        return (inv_std / d) * (
            d * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )


def softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class MultiHeadAttention:
    """Scaled dot-product attention with bias-free q/k/v/output projections."""

    def __init__(self, params: ParamStore, prefix: str, heads: int):
        self.p = params
        self.heads = heads
        self.names = {k: f"{prefix}.{k}" for k in ("q", "k", "v", "o")}

    def _split(self, x: np.ndarray) -> np.ndarray:
        rows, d = x.shape
        return x.reshape(rows, self.heads, d // self.heads).transpose(1, 0, 2)

    @staticmethod
    def _merge(x: np.ndarray) -> np.ndarray:
        heads, rows, dk = x.shape
        return x.transpose(1, 0, 2).reshape(rows, heads * dk)

    def forward(self, queries: np.ndarray, keys_values: np.ndarray):
        Wq, Wk, Wv, Wo = (self.p[self.names[k]] for k in ("q", "k", "v", "o"))
        d = Wq.shape[0]
        if queries.shape[-1] != d or keys_values.shape[-1] != d:
            raise ShapeError(
                f"attention width {d} got queries {queries.shape} and keys {keys_values.shape}"
            )
        Qh = self._split(queries @ Wq)
        Kh = self._split(keys_values @ Wk)
        Vh = self._split(keys_values @ Wv)
        scale = 1.0 / np.sqrt(d // self.heads)
        A = softmax_rows(Qh @ Kh.transpose(0, 2, 1) * scale)
        O = self._merge(A @ Vh)
        return O @ Wo, (queries, keys_values, Qh, Kh, Vh, A, O, scale)

    def backward(self, cache, dout: np.ndarray):
        """Returns (d queries, d keys_values)."""
        queries, keys_values, Qh, Kh, Vh, A, O, scale = cache
        g = self.p.grads
        Wq, Wk, Wv, Wo = (self.p[self.names[k]] for k in ("q", "k", "v", "o"))

        g[self.names["o"]] += O.T @ dout
        dOh = self._split(dout @ Wo.T)
        dA = dOh @ Vh.transpose(0, 2, 1)
        dVh = A.transpose(0, 2, 1) @ dOh
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
        dQ = self._merge(dS @ Kh)
        dK = self._merge(dS.transpose(0, 2, 1) @ Qh)
        dV = self._merge(dVh)

        g[self.names["q"]] += queries.T @ dQ
        g[self.names["k"]] += keys_values.T @ dK
        g[self.names["v"]] += keys_values.T @ dV
        return dQ @ Wq.T, dK @ Wk.T + dV @ Wv.T


class FeedForward:
    """linear -> ReLU -> linear"""

    def __init__(self, params: ParamStore, prefix: str):
        self.fc1 = Linear(params, f"{prefix}.fc1")
        self.fc2 = Linear(params, f"{prefix}.fc2")

    def forward(self, x: np.ndarray):
        a, c1 = self.fc1.forward(x)
        r = np.maximum(a, 0.0)
        y, c2 = self.fc2.forward(r)
        return y, (c1, a, c2)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        c1, a, c2 = cache
        dr = self.fc2.backward(c2, dy)
        return self.fc1.backward(c1, dr * (a > 0.0))


class EncoderBlock:
    """h1 = LN(h + SelfAttn(h)); out = LN(h1 + FF(h1))"""

    def __init__(self, params: ParamStore, prefix: str, heads: int):
        self.attn = MultiHeadAttention(params, f"{prefix}.attn", heads)
        self.norm1 = LayerNorm(params, f"{prefix}.norm1")
        self.ff = FeedForward(params, f"{prefix}.ff")
        self.norm2 = LayerNorm(params, f"{prefix}.norm2")

    def forward(self, h: np.ndarray):
        a, ca = self.attn.forward(h, h)
        h1, cn1 = self.norm1.forward(h + a)
        f, cf = self.ff.forward(h1)
        out, cn2 = self.norm2.forward(h1 + f)
        return out, (ca, cn1, cf, cn2)

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        ca, cn1, cf, cn2 = cache
        dsum2 = self.norm2.backward(cn2, dout)
        dh1 = dsum2 + self.ff.backward(cf, dsum2)
        dsum1 = self.norm1.backward(cn1, dh1)
        dq, dkv = self.attn.backward(ca, dsum1)
        return dsum1 + dq + dkv


# --- PARAMETERS ---


def param_shapes(config: AttentionConfig) -> List[Tuple[str, Tuple[int, ...], Optional[int]]]:
    """
    (name, shape, fan_in) for every tensor, in a fixed order.
    fan_in None marks LayerNorm tensors (gain 1, bias 0).
    """
    d, ff = config.d_h, config.d_ff
    shapes = [
        ("embed.weight", (config.d_x, d), config.d_x),
        ("embed.bias", (d,), config.d_x),
    ]
    for b in range(config.blocks):
        p = f"enc{b}"
        shapes += [(f"{p}.attn.{k}", (d, d), d) for k in ("q", "k", "v", "o")]
        shapes += [(f"{p}.norm1.gain", (d,), None), (f"{p}.norm1.bias", (d,), None)]
        shapes += [
            (f"{p}.ff.fc1.weight", (d, ff), d),
            (f"{p}.ff.fc1.bias", (ff,), d),
            (f"{p}.ff.fc2.weight", (ff, d), ff),
            (f"{p}.ff.fc2.bias", (d,), ff),
        ]
        shapes += [(f"{p}.norm2.gain", (d,), None), (f"{p}.norm2.bias", (d,), None)]
    shapes += [(f"dec.attn.{k}", (d, d), d) for k in ("q", "k", "v", "o")]
    shapes += [
        ("dec.query", (d, d), d),
        ("dec.key", (d, d), d),
        ("placeholder", (d,), d),
        ("stop", (d,), d),
    ]
    return shapes


def init_params(config: AttentionConfig, seed: int) -> ParamStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every learnable tensor."""
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape, fan_in in param_shapes(config):
        if fan_in is None:
            values[name] = np.ones(shape) if name.endswith("gain") else np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            values[name] = rng.uniform(-bound, bound, size=shape)
    return ParamStore(values)


# --- CHECKPOINTS ---
# Layout: magic, version (u32), meta length (u32), meta JSON, tensor count (u32),
# then per tensor: name length (u32), name, rank (u32), dims (u32 each),
# little-endian float32 data.


def save_checkpoint(path: Path, params: ParamStore, meta: dict):
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(params.values)),
    ]
    for name, value in params.values.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        chunks.append(value.astype("<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path: Path) -> Tuple[ParamStore, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"Cannot read checkpoint {path}: {e}") from e
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path} is not a checkpoint")
    try:
        return _parse_checkpoint(blob)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise ConfigError(f"Corrupt checkpoint {path}: {e}") from e


def _parse_checkpoint(blob: bytes) -> Tuple[ParamStore, dict]:
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"Unsupported checkpoint version {version}")
    offset = 12
    meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    values = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        values[name] = data.astype(np.float64).reshape(dims)
    return ParamStore(values), meta
