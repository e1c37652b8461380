"""Size-invariant communication-compressed goal policy.

Structure: each agent pools its 7-channel observation to a G x G grid,
applies a shared affine+tanh extractor per cell (the embedding that would be
transmitted to peers), fuses its own embedding with the mean of peer
embeddings, and decodes a categorical distribution over G x G goal blocks.
A value head shares the extractor. All gradients are closed-form; no autodiff
dependency.

Parameter layout (gradient-bearing, in checkpoint order):
    w_ex (C,7)   extractor affine      b_ex (C,)
    mix  (C,)    peer-half channel scale of the fused tensor
    w1 (H, 2C*G*G)  decoder hidden    b1 (H,)
    w2 (G*G, H)     decoder logits    b2 (G*G,)
    wv (2C,)        value head        bv (1,)
Buffers (saved, not differentiated): feat_mean (7,), feat_var (7,),
feat_count (1,).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Cell

_NORM_EPS = 1e-8

COMM_MODES = ("none", "compressed", "perfect")


@dataclass(frozen=True)
class PolicyConfig:
    s: int
    g: int = 5
    channels_out: int = 4
    hidden: int = 64
    comm_mode: str = "compressed"

    def __post_init__(self) -> None:
        if self.channels_out not in (1, 2, 4):
            raise ValueError("channels_out must be 1, 2 or 4")
        if self.g > self.s:
            raise ValueError("goal grid larger than input")
        if self.comm_mode not in COMM_MODES:
            raise ValueError(f"comm_mode must be one of {COMM_MODES}")

    @property
    def padded_size(self) -> int:
        return -(-self.s // self.g) * self.g

    @property
    def alpha(self) -> int:
        return self.padded_size // self.g


def compression_ratio(s: int, g: int) -> float:
    """Traffic saved by sending a G x G x 4 embedding instead of the raw
    S x S x 7 observation: 1 - 4G^2 / 7S^2."""
    if s < g:
        raise ValueError("s must be at least g")
    return 1.0 - (4.0 * g * g) / (7.0 * s * s)


def comm_bytes_per_peer(cfg: PolicyConfig) -> int:
    """Bytes one peer transmits to the deciding agent, by communication mode
    (float32 payloads)."""
    if cfg.comm_mode == "none":
        return 0
    if cfg.comm_mode == "compressed":
        return cfg.g * cfg.g * cfg.channels_out * 4
    return cfg.s * cfg.s * 7 * 4


_PARAM_SHAPES = (
    ("w_ex", lambda c: (c.channels_out, 7)),
    ("b_ex", lambda c: (c.channels_out,)),
    ("mix", lambda c: (c.channels_out,)),
    ("w1", lambda c: (c.hidden, 2 * c.channels_out * c.g * c.g)),
    ("b1", lambda c: (c.hidden,)),
    ("w2", lambda c: (c.g * c.g, c.hidden)),
    ("b2", lambda c: (c.g * c.g,)),
    ("wv", lambda c: (2 * c.channels_out,)),
    ("bv", lambda c: (1,)),
)
_BUFFER_SHAPES = (
    ("feat_mean", lambda c: (7,)),
    ("feat_var", lambda c: (7,)),
    ("feat_count", lambda c: (1,)),
)


@dataclass
class PolicyParams:
    values: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, cfg: PolicyConfig) -> "PolicyParams":
        vals = {name: np.zeros(shape(cfg)) for name, shape in _PARAM_SHAPES}
        for name, shape in _BUFFER_SHAPES:
            vals[name] = np.zeros(shape(cfg))
        vals["feat_var"][:] = 1.0
        return cls(vals)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.values.items()})

    @staticmethod
    def param_names() -> list[str]:
        return [name for name, _ in _PARAM_SHAPES]

    @staticmethod
    def buffer_names() -> list[str]:
        return [name for name, _ in _BUFFER_SHAPES]

    def grad_zeros(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(self.values[name])
                for name in self.param_names()}

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.values[n].ravel() for n in self.param_names()]
        )

    def from_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for name in self.param_names():
            arr = self.values[name]
            arr[...] = vec[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size
        if pos != vec.size:
            raise ValueError(f"vector length {vec.size}, expected {pos}")


def grads_to_vector(params: PolicyParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[n].ravel() for n in params.param_names()])


def _orthogonal(shape: tuple[int, ...], gain: float,
                rng: np.random.Generator) -> np.ndarray:
    rows = shape[0]
    cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols].reshape(shape)


def init_params(cfg: PolicyConfig, rng: np.random.Generator) -> PolicyParams:
    """Orthogonal weight matrices (small gain on the logits head), zero
    biases, unit peer-mixing scales."""
    p = PolicyParams.zeros(cfg)
    p.values["w_ex"] = _orthogonal((cfg.channels_out, 7), 1.0, rng)
    p.values["mix"][:] = 1.0
    p.values["w1"] = _orthogonal((cfg.hidden, 2 * cfg.channels_out * cfg.g * cfg.g), 1.0, rng)
    p.values["w2"] = _orthogonal((cfg.g * cfg.g, cfg.hidden), 0.01, rng)
    p.values["wv"] = _orthogonal((1, 2 * cfg.channels_out), 1.0, rng).reshape(-1)
    return p


# ---- observation pooling and normalization ----


def pool_observation(info: np.ndarray, cfg: PolicyConfig) -> np.ndarray:
    """Average-pool each channel down to G x G over a zero-padded canvas.

    The block size adapts to the input, so weights trained at one map size
    run unchanged on another; cfg.s is only the nominal training size."""
    c, h, w = info.shape
    if h != w:
        raise ValueError(f"observations must be square, got {info.shape}")
    a = -(-h // cfg.g)
    pad = a * cfg.g
    if pad != h:
        padded = np.zeros((c, pad, pad))
        padded[:, :h, :w] = info
    else:
        padded = info
    return padded.reshape(c, cfg.g, a, cfg.g, a).mean(axis=(2, 4))


def normalize_pooled(pooled: np.ndarray, params: PolicyParams) -> np.ndarray:
    """Apply the per-channel running feature statistics."""
    mean = params["feat_mean"][:, None, None]
    var = params["feat_var"][:, None, None]
    return (pooled - mean) / np.sqrt(var + _NORM_EPS)


# ---- forward / backward pairs ----


def extract_features(pooled_norm: np.ndarray, params: PolicyParams
                     ) -> tuple[np.ndarray, tuple]:
    """Per-cell affine 7 -> C with tanh; the transmitted embedding."""
    pre = np.einsum("kj,jgh->kgh", params["w_ex"], pooled_norm)
    pre += params["b_ex"][:, None, None]
    emb = np.tanh(pre)
    return emb, (pooled_norm, emb)


def extract_backward(cache: tuple, d_emb: np.ndarray,
                     grads: dict[str, np.ndarray]) -> None:
    pooled_norm, emb = cache
    dpre = d_emb * (1.0 - emb * emb)
    grads["w_ex"] += np.einsum("kgh,jgh->kj", dpre, pooled_norm)
    grads["b_ex"] += dpre.sum(axis=(1, 2))


def aggregate_relations(own: np.ndarray, peers: list[np.ndarray],
                        params: PolicyParams) -> tuple[np.ndarray, tuple]:
    """Fuse own embedding with the scaled mean of peer embeddings; the
    output shape never depends on the number of peers."""
    if peers:
        mean_peer = np.mean(peers, axis=0)
    else:
        mean_peer = np.zeros_like(own)
    scaled = params["mix"][:, None, None] * mean_peer
    fused = np.concatenate([own, scaled], axis=0)
    return fused, (mean_peer, len(peers))


def aggregate_backward(cache: tuple, d_fused: np.ndarray,
                       params: PolicyParams, grads: dict[str, np.ndarray]
                       ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (d_own, list of per-peer gradients)."""
    mean_peer, n_peers = cache
    c = mean_peer.shape[0]
    d_own = d_fused[:c]
    d_scaled = d_fused[c:]
    grads["mix"] += (d_scaled * mean_peer).sum(axis=(1, 2))
    if n_peers == 0:
        return d_own, []
    d_mean = d_scaled * params["mix"][:, None, None]
    d_peer = d_mean / n_peers
    return d_own, [d_peer] * n_peers


@dataclass(frozen=True)
class GoalDistribution:
    probs: np.ndarray  # (G*G,)
    g: int

    def __post_init__(self) -> None:
        total = float(self.probs.sum())
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"probabilities sum to {total}")


def decode_action(fused: np.ndarray, params: PolicyParams,
                  cfg: PolicyConfig) -> tuple[GoalDistribution, tuple]:
    """Hidden affine + tanh, then affine to G*G logits and softmax."""
    x = fused.ravel()
    pre1 = params["w1"] @ x + params["b1"]
    h1 = np.tanh(pre1)
    logits = params["w2"] @ h1 + params["b2"]
    z = logits - logits.max()
    e = np.exp(z)
    probs = e / e.sum()
    return GoalDistribution(probs=probs, g=cfg.g), (x, h1, probs)


def decode_backward(cache: tuple, d_logits: np.ndarray, params: PolicyParams,
                    grads: dict[str, np.ndarray]) -> np.ndarray:
    """Returns d_fused (flattened input gradient reshaped by the caller)."""
    x, h1, _ = cache
    grads["w2"] += np.outer(d_logits, h1)
    grads["b2"] += d_logits
    dh1 = params["w2"].T @ d_logits
    dpre1 = dh1 * (1.0 - h1 * h1)
    grads["w1"] += np.outer(dpre1, x)
    grads["b1"] += dpre1
    return params["w1"].T @ dpre1


def value_estimate(fused: np.ndarray, params: PolicyParams) -> tuple[float, tuple]:
    """Affine head over channel-pooled fused features."""
    pooled = fused.mean(axis=(1, 2))
    v = float(params["wv"] @ pooled + params["bv"][0])
    return v, (pooled, fused.shape)


def value_backward(cache: tuple, d_v: float, params: PolicyParams,
                   grads: dict[str, np.ndarray]) -> np.ndarray:
    """Returns d_fused."""
    pooled, shape = cache
    grads["wv"] += d_v * pooled
    grads["bv"] += np.array([d_v])
    cells = shape[1] * shape[2]
    return np.broadcast_to(
        (d_v / cells) * params["wv"][:, None, None], shape
    ).copy()


# ---- distribution helpers ----


def log_prob(dist: GoalDistribution, index: int) -> float:
    return float(np.log(dist.probs[index]))


def entropy(dist: GoalDistribution) -> float:
    p = dist.probs
    return float(-(p * np.log(p)).sum())


def d_logits_log_prob(probs: np.ndarray, index: int) -> np.ndarray:
    """Gradient of log probs[index] with respect to the logits."""
    d = -probs.copy()
    d[index] += 1.0
    return d


def d_logits_entropy(probs: np.ndarray) -> np.ndarray:
    """Gradient of the categorical entropy with respect to the logits."""
    h = float(-(probs * np.log(probs)).sum())
    return -probs * (np.log(probs) + h)


def sample_goal_index(dist: GoalDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(dist.probs.size, p=dist.probs))


def sample_goal(dist: GoalDistribution, rng: np.random.Generator,
                map_dims: tuple[int, int]) -> Cell:
    """Draw a goal block and map it to the center cell of that block."""
    return goal_cell_for_index(sample_goal_index(dist, rng), dist.g, map_dims)


def argmax_goal(dist: GoalDistribution, map_dims: tuple[int, int]) -> Cell:
    index = int(np.argmax(dist.probs))
    return goal_cell_for_index(index, dist.g, map_dims)


def goal_cell_for_index(index: int, g: int, map_dims: tuple[int, int]) -> Cell:
    """Center cell of goal-grid block `index` (row-major), clamped to map
    bounds. The block edge comes from the padded canvas over max(dims)."""
    width, height = map_dims
    gy, gx = divmod(index, g)
    alpha = -(-max(width, height) // g)
    cx = min(gx * alpha + alpha // 2, width - 1)
    cy = min(gy * alpha + alpha // 2, height - 1)
    return (cx, cy)


# ---- full per-agent passes ----


@dataclass
class ActorPass:
    dist: GoalDistribution
    caches: tuple


def actor_forward(own_pooled: np.ndarray, peer_pooled: list[np.ndarray],
                  params: PolicyParams, cfg: PolicyConfig) -> ActorPass:
    """Distribution over goals from raw pooled observations (normalization
    applied inside)."""
    own_n = normalize_pooled(own_pooled, params)
    own_emb, own_cache = extract_features(own_n, params)
    peer_caches = []
    peer_embs = []
    for p in peer_pooled:
        pn = normalize_pooled(p, params)
        emb, cache = extract_features(pn, params)
        peer_embs.append(emb)
        peer_caches.append(cache)
    fused, agg_cache = aggregate_relations(own_emb, peer_embs, params)
    dist, dec_cache = decode_action(fused, params, cfg)
    return ActorPass(dist, (own_cache, peer_caches, agg_cache, dec_cache, fused.shape))


def actor_backward(fwd: ActorPass, d_logits: np.ndarray, params: PolicyParams,
                   grads: dict[str, np.ndarray]) -> None:
    own_cache, peer_caches, agg_cache, dec_cache, fused_shape = fwd.caches
    d_fused = decode_backward(dec_cache, d_logits, params, grads).reshape(fused_shape)
    d_own, d_peers = aggregate_backward(agg_cache, d_fused, params, grads)
    extract_backward(own_cache, d_own, grads)
    for cache, d_peer in zip(peer_caches, d_peers):
        extract_backward(cache, d_peer, grads)


@dataclass
class CriticPass:
    value: float
    caches: tuple


def critic_forward(own_pooled: np.ndarray, peer_pooled: list[np.ndarray],
                   params: PolicyParams, cfg: PolicyConfig) -> CriticPass:
    own_n = normalize_pooled(own_pooled, params)
    own_emb, own_cache = extract_features(own_n, params)
    peer_caches = []
    peer_embs = []
    for p in peer_pooled:
        pn = normalize_pooled(p, params)
        emb, cache = extract_features(pn, params)
        peer_embs.append(emb)
        peer_caches.append(cache)
    fused, agg_cache = aggregate_relations(own_emb, peer_embs, params)
    v, val_cache = value_estimate(fused, params)
    return CriticPass(v, (own_cache, peer_caches, agg_cache, val_cache))


def critic_backward(fwd: CriticPass, d_v: float, params: PolicyParams,
                    grads: dict[str, np.ndarray]) -> None:
    own_cache, peer_caches, agg_cache, val_cache = fwd.caches
    d_fused = value_backward(val_cache, d_v, params, grads)
    d_own, d_peers = aggregate_backward(agg_cache, d_fused, params, grads)
    extract_backward(own_cache, d_own, grads)
    for cache, d_peer in zip(peer_caches, d_peers):
        extract_backward(cache, d_peer, grads)


# ---- checkpoint io ----


def save_checkpoint(params: PolicyParams, cfg: PolicyConfig,
                    path: str | Path) -> None:
    """Flat float32 little-endian vector plus a JSON sidecar with the layout."""
    path = Path(path)
    order = params.param_names() + params.buffer_names()
    layout = []
    offset = 0
    chunks = []
    for name in order:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))
    sidecar = {
        "s": cfg.s, "g": cfg.g, "channels_out": cfg.channels_out,
        "hidden": cfg.hidden, "comm_mode": cfg.comm_mode,
        "total_floats": offset, "layout": layout,
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, PolicyConfig]:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    cfg = PolicyConfig(
        s=sidecar["s"], g=sidecar["g"], channels_out=sidecar["channels_out"],
        hidden=sidecar["hidden"], comm_mode=sidecar["comm_mode"],
    )
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    if flat.size != sidecar["total_floats"]:
        raise ValueError(
            f"checkpoint holds {flat.size} floats, sidecar says "
            f"{sidecar['total_floats']}"
        )
    values = {}
    for entry in sidecar["layout"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        chunk = flat[entry["offset"]:entry["offset"] + size]
        values[entry["name"]] = chunk.reshape(shape).astype(np.float64)
    return PolicyParams(values), cfg
