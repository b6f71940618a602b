"""Minimal differentiable substrate for the noise-prediction network.

Tensors are float32 numpy arrays. The operator set is fixed — dense layers,
SiLU, parameter-free layer normalization, residual adds, and a sinusoidal
step embedding — with hand-derived backward passes, so there is no general
autodiff graph to audit. Gradient correctness is pinned against central
finite differences in the test suite.

Network shape (hidden width H, target dim D, condition dim C):

    temb = W_t * sinusoid(t) + b_t
    cemb = W_c2 * silu(W_c1 * x + b_c1) + b_c2        (learned null vector when
                                                       the condition is absent)
    h    = W_in * y_t + b_in + temb + cemb
    4 x  [ h += W_f2 * silu(W_f1 * layernorm(h) + b_f1) + b_f2 ]
    eps  = W_out * layernorm(h) + b_out
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, NumericError

__all__ = [
    "DenoiserParams",
    "init_denoiser",
    "denoiser_forward",
    "forward_batch",
    "backward_batch",
    "loss_and_gradients",
    "AdamState",
    "adam_step",
    "EmaState",
    "ema_update",
    "save_checkpoint",
    "load_checkpoint",
    "sinusoidal_embedding",
]

_LN_EPS = np.float32(1e-5)


@dataclass
class DenoiserParams:
    """All learnable tensors, keyed by name in canonical (checkpoint) order."""

    target_dim: int
    cond_dim: int
    hidden: int = 256
    time_dim: int = 64
    n_blocks: int = 4
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            target_dim=self.target_dim,
            cond_dim=self.cond_dim,
            hidden=self.hidden,
            time_dim=self.time_dim,
            n_blocks=self.n_blocks,
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


def init_denoiser(
    seed: int,
    target_dim: int,
    cond_dim: int,
    hidden: int = 256,
    time_dim: int = 64,
    n_blocks: int = 4,
) -> DenoiserParams:
    """Glorot-uniform weights, zero biases, and a zero output head (so the
    initial prediction is the noise mean)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 10))))
    t: dict[str, np.ndarray] = {}
    t["cond1.w"] = _glorot(rng, cond_dim, hidden)
    t["cond1.b"] = np.zeros(hidden, dtype=np.float32)
    t["cond2.w"] = _glorot(rng, hidden, hidden)
    t["cond2.b"] = np.zeros(hidden, dtype=np.float32)
    t["null_cond"] = np.zeros(hidden, dtype=np.float32)
    t["time.w"] = _glorot(rng, time_dim, hidden)
    t["time.b"] = np.zeros(hidden, dtype=np.float32)
    t["input.w"] = _glorot(rng, target_dim, hidden)
    t["input.b"] = np.zeros(hidden, dtype=np.float32)
    for j in range(n_blocks):
        t[f"block{j}.fc1.w"] = _glorot(rng, hidden, hidden)
        t[f"block{j}.fc1.b"] = np.zeros(hidden, dtype=np.float32)
        t[f"block{j}.fc2.w"] = _glorot(rng, hidden, hidden)
        t[f"block{j}.fc2.b"] = np.zeros(hidden, dtype=np.float32)
    t["head.w"] = np.zeros((hidden, target_dim), dtype=np.float32)
    t["head.b"] = np.zeros(target_dim, dtype=np.float32)
    return DenoiserParams(
        target_dim=target_dim,
        cond_dim=cond_dim,
        hidden=hidden,
        time_dim=time_dim,
        n_blocks=n_blocks,
        tensors=t,
    )


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard sin/cos position features of the (integer) diffusion step."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float32) / half)
    angles = np.asarray(t, dtype=np.float32)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(np.float32)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.float32(1.0) / (np.float32(1.0) + np.exp(-x))


def _silu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = _sigmoid(x)
    return x * s, s


def _silu_grad(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (np.float32(1.0) + x * (np.float32(1.0) - s))


def _layernorm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = np.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = np.float32(1.0) / np.sqrt(var + _LN_EPS)
    return xc * inv, inv


def _layernorm_grad(dy: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    m1 = np.mean(dy, axis=1, keepdims=True)
    m2 = np.mean(dy * y, axis=1, keepdims=True)
    return inv * (dy - m1 - y * m2)


def forward_batch(
    params: DenoiserParams,
    y_t: np.ndarray,
    t: np.ndarray,
    cond: np.ndarray,
    cond_mask: np.ndarray,
    want_cache: bool = False,
):
    """Noise prediction for a batch. cond_mask rows that are False use the
    learned null-condition embedding instead of the encoded condition."""
    p = params.tensors
    y_t = np.ascontiguousarray(y_t, dtype=np.float32)
    cond = np.ascontiguousarray(cond, dtype=np.float32)
    if y_t.shape[1] != params.target_dim:
        raise ValueError(f"y_t has dim {y_t.shape[1]}, network expects {params.target_dim}")
    if cond.shape[1] != params.cond_dim:
        raise ValueError(f"condition has dim {cond.shape[1]}, network expects {params.cond_dim}")
    temb0 = sinusoidal_embedding(t, params.time_dim)
    temb = temb0 @ p["time.w"] + p["time.b"]
    c1 = cond @ p["cond1.w"] + p["cond1.b"]
    a1, s1 = _silu(c1)
    c2 = a1 @ p["cond2.w"] + p["cond2.b"]
    mask = np.asarray(cond_mask, dtype=bool)[:, None]
    cemb = np.where(mask, c2, p["null_cond"][None, :])
    h = y_t @ p["input.w"] + p["input.b"] + temb + cemb
    cache_blocks = []
    for j in range(params.n_blocks):
        ln, inv = _layernorm(h)
        f1 = ln @ p[f"block{j}.fc1.w"] + p[f"block{j}.fc1.b"]
        a, s = _silu(f1)
        f2 = a @ p[f"block{j}.fc2.w"] + p[f"block{j}.fc2.b"]
        if want_cache:
            cache_blocks.append((h, ln, inv, f1, s, a))
        h = h + f2
    ln_f, inv_f = _layernorm(h)
    eps_hat = ln_f @ p["head.w"] + p["head.b"]
    if not want_cache:
        return eps_hat
    cache = {
        "y_t": y_t,
        "temb0": temb0,
        "cond": cond,
        "mask": mask,
        "c1": c1,
        "s1": s1,
        "a1": a1,
        "blocks": cache_blocks,
        "ln_f": ln_f,
        "inv_f": inv_f,
    }
    return eps_hat, cache


def backward_batch(params: DenoiserParams, cache: dict, d_eps: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for a batch given dLoss/d eps_hat."""
    p = params.tensors
    g: dict[str, np.ndarray] = {}
    d_eps = np.ascontiguousarray(d_eps, dtype=np.float32)
    g["head.w"] = cache["ln_f"].T @ d_eps
    g["head.b"] = d_eps.sum(axis=0)
    dh = _layernorm_grad(d_eps @ p["head.w"].T, cache["ln_f"], cache["inv_f"])
    for j in reversed(range(params.n_blocks)):
        h_in, ln, inv, f1, s, a = cache["blocks"][j]
        d_f2 = dh  # residual branch; skip path continues in dh below
        g[f"block{j}.fc2.w"] = a.T @ d_f2
        g[f"block{j}.fc2.b"] = d_f2.sum(axis=0)
        d_a = d_f2 @ p[f"block{j}.fc2.w"].T
        d_f1 = d_a * _silu_grad(f1, s)
        g[f"block{j}.fc1.w"] = ln.T @ d_f1
        g[f"block{j}.fc1.b"] = d_f1.sum(axis=0)
        dh = dh + _layernorm_grad(d_f1 @ p[f"block{j}.fc1.w"].T, ln, inv)
    d_cemb = dh
    d_c2 = np.where(cache["mask"], d_cemb, np.float32(0.0))
    g["null_cond"] = np.where(cache["mask"], np.float32(0.0), d_cemb).sum(axis=0)
    g["cond2.w"] = cache["a1"].T @ d_c2
    g["cond2.b"] = d_c2.sum(axis=0)
    d_a1 = d_c2 @ p["cond2.w"].T
    d_c1 = d_a1 * _silu_grad(cache["c1"], cache["s1"])
    g["cond1.w"] = cache["cond"].T @ d_c1
    g["cond1.b"] = d_c1.sum(axis=0)
    g["time.w"] = cache["temb0"].T @ dh
    g["time.b"] = dh.sum(axis=0)
    g["input.w"] = cache["y_t"].T @ dh
    g["input.b"] = dh.sum(axis=0)
    return g


def denoiser_forward(
    params: DenoiserParams,
    y_t: np.ndarray,
    t: int,
    x: np.ndarray | None,
) -> np.ndarray:
    """Single-vector noise prediction; x=None routes through the null embedding."""
    y = np.asarray(y_t, dtype=np.float32)[None, :]
    if x is None:
        cond = np.zeros((1, params.cond_dim), dtype=np.float32)
        mask = np.array([False])
    else:
        cond = np.asarray(x, dtype=np.float32)[None, :]
        mask = np.array([True])
    return forward_batch(params, y, np.array([t]), cond, mask)[0]


def loss_and_gradients(
    params: DenoiserParams,
    y_t: np.ndarray,
    t: np.ndarray,
    cond: np.ndarray,
    cond_mask: np.ndarray,
    eps: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over the batch of ||eps - eps_hat||^2, plus exact gradients."""
    if len(y_t) == 0:
        raise ValueError("loss_and_gradients requires a nonempty batch")
    eps = np.asarray(eps, dtype=np.float32)
    eps_hat, cache = forward_batch(params, y_t, t, cond, cond_mask, want_cache=True)
    resid = eps_hat - eps
    loss = float(np.mean(np.sum(resid.astype(np.float64) ** 2, axis=1)))
    if not math.isfinite(loss):
        raise NumericError(f"non-finite training loss: {loss}")
    d_eps = (np.float32(2.0 / len(y_t)) * resid).astype(np.float32)
    return loss, backward_batch(params, cache, d_eps)


@dataclass
class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: DenoiserParams, learning_rate: float = 1e-4) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.tensors.items()},
            v={k: np.zeros_like(v) for k, v in params.tensors.items()},
            learning_rate=learning_rate,
        )


def adam_step(params: DenoiserParams, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    b1 = np.float32(state.beta1)
    b2 = np.float32(state.beta2)
    corr1 = np.float32(1.0 - state.beta1 ** state.step)
    corr2 = np.float32(1.0 - state.beta2 ** state.step)
    lr = np.float32(state.learning_rate)
    eps = np.float32(state.eps)
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (np.float32(1.0) - b1) * g
        v *= b2
        v += (np.float32(1.0) - b2) * (g * g)
        params.tensors[name] -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


@dataclass
class EmaState:
    """Exponential moving average of the parameters (the sampling weights)."""

    tensors: dict[str, np.ndarray]
    decay: float = 0.999

    @classmethod
    def for_params(cls, params: DenoiserParams, decay: float = 0.999) -> "EmaState":
        return cls(tensors={k: v.copy() for k, v in params.tensors.items()}, decay=decay)

    def as_params(self, params: DenoiserParams) -> DenoiserParams:
        """The EMA weights wrapped in the same architecture description."""
        out = params.copy()
        out.tensors = {k: v.copy() for k, v in self.tensors.items()}
        return out


def ema_update(ema: EmaState, params: DenoiserParams) -> None:
    d = np.float32(ema.decay)
    one_minus = np.float32(1.0) - d
    for name, p in params.tensors.items():
        s = ema.tensors[name]
        s *= d
        s += one_minus * p


# ---------------------------------------------------------------------------
# checkpoint format: compact JSON manifest line + raw little-endian f32 blob


def _arch_json(params: DenoiserParams) -> dict:
    return {
        "target_dim": params.target_dim,
        "cond_dim": params.cond_dim,
        "hidden": params.hidden,
        "time_dim": params.time_dim,
        "n_blocks": params.n_blocks,
    }


def save_checkpoint(
    path: Path,
    params: DenoiserParams,
    ema: EmaState,
    extra: dict | None = None,
) -> None:
    """Write one file: manifest JSON, newline, then all tensors as <f4 bytes."""
    entries = []
    blobs = []
    for prefix, tensors in (("p", params.tensors), ("e", ema.tensors)):
        for name, arr in tensors.items():
            entries.append({"name": f"{prefix}:{name}", "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(blobs)
    manifest = {
        "format_version": 1,
        "arch": _arch_json(params),
        "ema_decay": ema.decay,
        "extra": extra or {},
        "tensors": entries,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + b"\n" + blob)


def load_checkpoint(path: Path) -> tuple[DenoiserParams, EmaState, dict]:
    """Inverse of save_checkpoint; validates shapes and the blob digest."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DatasetFormatError("checkpoint has no manifest line")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"checkpoint manifest is not valid JSON: {e}") from e
    if manifest.get("format_version") != 1:
        raise DatasetFormatError(f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = raw[nl + 1 :]
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise DatasetFormatError("checkpoint blob digest mismatch")
    arch = manifest["arch"]
    params = DenoiserParams(
        target_dim=arch["target_dim"],
        cond_dim=arch["cond_dim"],
        hidden=arch["hidden"],
        time_dim=arch["time_dim"],
        n_blocks=arch["n_blocks"],
    )
    ema = EmaState(tensors={}, decay=manifest["ema_decay"])
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(blob):
            raise DatasetFormatError(f"checkpoint blob truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
        prefix, _, name = entry["name"].partition(":")
        if prefix == "p":
            params.tensors[name] = arr
        elif prefix == "e":
            ema.tensors[name] = arr
        else:
            raise DatasetFormatError(f"unknown tensor namespace in {entry['name']!r}")
    if offset != len(blob):
        raise DatasetFormatError("checkpoint blob has trailing bytes")
    if set(params.tensors) != set(ema.tensors):
        raise DatasetFormatError("checkpoint parameter and EMA tensor sets differ")
    return params, ema, manifest["extra"]
