"""Forward-only kernels of a DETR-style point-object detector.

Coordinates: pixel ``(col, row)`` has index coordinates ``(col, row)`` and
pixel-unit centre ``(col + 0.5, row + 0.5)``.  Deformable sampling on the
pixel map works in index coordinates with zero padding outside the grid.
The global token lives in its own feature space where it fills the nine
integer points ``{-1, 0, 1}^2``; pixel references are mapped into the
``2 x 2`` square around the origin before sampling there.

Weights are a flat ``{name: float32 array}`` dict.  Math runs in float64.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatch
from .hsicube import BBox, Detection, HyperCube

__all__ = [
    "KernelConfig",
    "ModelWeights",
    "TokenGrid",
    "AnchorState",
    "init_weights",
    "save_weights",
    "load_weights",
    "layer_norm",
    "sigmoid",
    "inverse_sigmoid",
    "position_embedding",
    "initial_offsets",
    "attention_weights",
    "bilinear_weights",
    "bilinear_sample",
    "self_excited_value",
    "tokenize",
    "self_s2a",
    "encoder_layer",
    "encode",
    "init_anchors",
    "decode_layer",
    "run_forward",
    "run_forward_batch",
    "check_invariants",
]

LN_EPS = 1e-5
SIG_EPS = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Architecture and inference settings.

    ``heads``, ``points`` and ``ffn`` have no published values for this
    detector family's point-object variant; the defaults follow the usual
    deformable-attention setup.
    """

    bands: int
    num_classes: int
    dim: int = 64
    heads: int = 8
    points: int = 4
    ffn: int = 0
    enc_layers: int = 6
    dec_layers: int = 6
    anchor_size: float = 1.0
    scale: float = 1.0
    q_match: int = 300
    top_k: int = 300
    nms_iou: float = 0.01

    def __post_init__(self):
        if self.ffn == 0:
            object.__setattr__(self, "ffn", 4 * self.dim)
        if self.dim % self.heads:
            raise ValueError("heads must divide dim")
        if self.dim % 4:
            raise ValueError("dim must be a multiple of 4 for the 2D position embedding")
        if not self.scale > 0:
            raise ValueError("scale V must be positive")
        if min(self.bands, self.num_classes, self.points, self.q_match, self.top_k) < 1:
            raise ValueError("sizes must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass(eq=False)
class ModelWeights:
    config: KernelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


@dataclass(eq=False)
class TokenGrid:
    pixels: np.ndarray      # (H, W, C)
    global_token: np.ndarray  # (C,)

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.global_token.shape != (self.pixels.shape[2],):
            raise ShapeMismatch("pixel tokens must be (H, W, C) and the global token (C,)")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(eq=False)
class AnchorState:
    boxes: np.ndarray    # (Q, 4) normalized cx, cy, w, h
    scores: np.ndarray   # (Q, n_cls)
    queries: np.ndarray  # (Q, C)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def _attn_shapes(c: KernelConfig, prefix: str) -> dict[str, tuple]:
    m, k = c.heads, c.points
    return {
        f"{prefix}.off_w": (c.dim, m * 2 * k * 2), f"{prefix}.off_b": (m * 2 * k * 2,),
        f"{prefix}.attn_w": (c.dim, m * 2 * k), f"{prefix}.attn_b": (m * 2 * k,),
        f"{prefix}.val_w": (c.dim, c.dim), f"{prefix}.val_b": (c.dim,),
        f"{prefix}.out_w": (c.dim, c.dim), f"{prefix}.out_b": (c.dim,),
        f"{prefix}.ln1_g": (c.dim,), f"{prefix}.ln1_b": (c.dim,),
        f"{prefix}.ffn1_w": (c.dim, c.ffn), f"{prefix}.ffn1_b": (c.ffn,),
        f"{prefix}.ffn2_w": (c.ffn, c.dim), f"{prefix}.ffn2_b": (c.dim,),
        f"{prefix}.ln2_g": (c.dim,), f"{prefix}.ln2_b": (c.dim,),
    }


def _head_shapes(c: KernelConfig, prefix: str) -> dict[str, tuple]:
    return {
        f"{prefix}.breg0_w": (c.dim, c.dim), f"{prefix}.breg0_b": (c.dim,),
        f"{prefix}.breg1_w": (c.dim, c.dim), f"{prefix}.breg1_b": (c.dim,),
        f"{prefix}.breg2_w": (c.dim, 4), f"{prefix}.breg2_b": (4,),
        f"{prefix}.cls_w": (c.dim, c.num_classes), f"{prefix}.cls_b": (c.num_classes,),
    }


def weight_shapes(c: KernelConfig) -> dict[str, tuple]:
    shapes = {"embed.lin_w": (c.bands, c.dim), "embed.lin_b": (c.dim,),
              "embed.ln_g": (c.dim,), "embed.ln_b": (c.dim,)}
    for j in range(c.enc_layers):
        shapes.update(_attn_shapes(c, f"enc{j}"))
    shapes.update(_head_shapes(c, "head0"))
    for d in range(1, c.dec_layers + 1):
        shapes.update(_attn_shapes(c, f"dec{d}"))
        shapes.update(_head_shapes(c, f"dec{d}"))
    return shapes


def init_weights(config: KernelConfig, seed: int = 0) -> ModelWeights:
    """Seeded random weights: fan-in scaled normals, unit LN gains, small offset heads."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in weight_shapes(config).items():
        kind = name.rsplit(".", 1)[1]
        if kind.endswith("_g"):
            arr = np.ones(shape)
        elif kind.endswith("_b"):
            arr = np.zeros(shape) if kind.startswith(("ln", "off")) else rng.normal(0, 0.02, shape)
        elif kind == "off_w":
            arr = rng.normal(0, 0.01, shape)
        else:
            arr = rng.normal(0, 1.0 / math.sqrt(shape[0]), shape)
        out[name] = arr.astype(np.float32)
    return ModelWeights(config, out)


def validate_weights(weights: ModelWeights) -> None:
    for name, shape in weight_shapes(weights.config).items():
        if name not in weights.tensors:
            raise ShapeMismatch(f"missing weight {name}")
        if weights.tensors[name].shape != shape:
            raise ShapeMismatch(f"{name}: expected {shape}, got {weights.tensors[name].shape}")


def save_weights(weights: ModelWeights, directory) -> None:
    """``weights.f32`` (little-endian float32, concatenated) plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(d / "weights.f32", "wb") as fh:
        for name in sorted(weights.tensors):
            arr = np.ascontiguousarray(weights.tensors[name], dtype="<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    doc = {"config": asdict(weights.config), "tensors": entries}
    (d / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_weights(directory) -> ModelWeights:
    d = Path(directory)
    doc = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    flat = np.fromfile(d / "weights.f32", dtype="<f4")
    tensors = {}
    for e in doc["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + n > flat.size:
            raise ShapeMismatch(f"weights file too short for {e['name']}")
        tensors[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    w = ModelWeights(KernelConfig(**doc["config"]), tensors)
    validate_weights(w)
    return w


# ---------------------------------------------------------------------------
# Elementary ops
# ---------------------------------------------------------------------------


def _w(weights, name):
    return weights[name].astype(np.float64)


def _linear(x, weights, prefix):
    return x @ _w(weights, prefix + "_w") + _w(weights, prefix + "_b")


def layer_norm(x, gamma=None, beta=None, eps: float = LN_EPS) -> np.ndarray:
    """Per-token LayerNorm.  Tokens with variance below ``eps`` normalize to zero."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    z = np.where(var < eps, 0.0, (x - mu) / np.sqrt(var + eps))
    if gamma is not None:
        z = z * gamma
    if beta is not None:
        z = z + beta
    return z


def sigmoid(x) -> np.ndarray:
    return np.clip(expit(np.asarray(x, dtype=np.float64)), SIG_EPS, 1.0 - SIG_EPS)


def inverse_sigmoid(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), SIG_EPS, 1.0 - SIG_EPS)
    return np.log(p) - np.log1p(-p)


def position_embedding(coords, dim: int) -> np.ndarray:
    """2D sinusoidal embedding of ``(..., 2)`` ``(x, y)`` coordinates; x fills the first half."""
    coords = np.asarray(coords, dtype=np.float64)
    quarter = dim // 4
    freq = 10000.0 ** (-np.arange(quarter) / quarter)
    parts = []
    for axis in (0, 1):
        ang = coords[..., axis, None] * freq
        parts += [np.sin(ang), np.cos(ang)]
    return np.concatenate(parts, axis=-1)


def initial_offsets(heads: int, points: int) -> np.ndarray:
    """``(M, K, 2)`` offsets: point k of every head on the 2k x 2k square around the reference.

    Head ``m`` points along angle ``2*pi*m/M``; with eight heads that covers
    the four corners and four edge midpoints.
    """
    theta = 2 * np.pi * np.arange(heads) / heads
    d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    d = d / np.abs(d).max(axis=-1, keepdims=True)
    d = np.where(np.abs(d) < 1e-12, 0.0, d)
    return d[:, None, :] * np.arange(1, points + 1)[None, :, None]


def attention_weights(logits) -> np.ndarray:
    """Softmax over the last axis (the 2K pixel and global points of one head)."""
    z = np.asarray(logits, dtype=np.float64)
    z = np.exp(z - z.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def bilinear_weights(a, b):
    """Corner weights ``(ab, b(1-a), a(1-b), (1-a)(1-b))`` for fractional distances ``a``, ``b``.

    ``a`` and ``b`` are the horizontal and vertical distances from the
    sample to the corner that receives ``(1-a)(1-b)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return a * b, b * (1 - a), a * (1 - b), (1 - a) * (1 - b)


def _gather_bilinear(vmap: np.ndarray, x: np.ndarray, y: np.ndarray, head_idx=None, wrap=False) -> np.ndarray:
    """Sample ``vmap`` ``(H, W, ...)`` at index coordinates; returns ``x.shape + trailing``.

    With ``head_idx`` the map is ``(H, W, M, Ch)`` and ``x`` has a head axis
    aligned with ``head_idx``.
    """
    h, w = vmap.shape[:2]
    x0 = np.floor(x)
    y0 = np.floor(y)
    a = x - x0
    b = y - y0
    w11, w01, w10, w00 = bilinear_weights(a, b)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = 0.0
    for dx, dy, wt in ((0, 0, w00), (1, 0, w10), (0, 1, w01), (1, 1, w11)):
        xi, yi = x0 + dx, y0 + dy
        if wrap:
            xi, yi, ok = xi % w, yi % h, np.ones(xi.shape, dtype=bool)
        else:
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xi, yi = np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1)
        vals = vmap[yi, xi] if head_idx is None else vmap[yi, xi, head_idx]
        out = out + vals * (wt * ok)[..., None]
    return out


def bilinear_sample(grid, pos) -> np.ndarray:
    """Bilinear sample of an ``(H, W, C)`` map at index position ``(x, y)``; zero outside."""
    grid = np.asarray(grid, dtype=np.float64)
    x, y = (float(v) for v in pos)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("sample position must be finite")
    return _gather_bilinear(grid, np.array(x), np.array(y))


def _hat(u):
    return np.clip(2.0 - np.abs(u), 0.0, 1.0)


def self_excited_value(global_token, pos) -> np.ndarray:
    """Bilinear sample of the space holding ``global_token`` on ``{-1,0,1}^2``, zero elsewhere."""
    g = np.asarray(global_token, dtype=np.float64)
    x, y = (np.asarray(v, dtype=np.float64) for v in pos)
    return (_hat(x) * _hat(y))[..., None] * g


# ---------------------------------------------------------------------------
# Attention and layers
# ---------------------------------------------------------------------------


def tokenize(cube: HyperCube, weights: ModelWeights) -> TokenGrid:
    """``P0 = LN(linear(X / V))`` per pixel, global token = mean pixel token."""
    c = weights.config
    if cube.bands != c.bands:
        raise ShapeMismatch(f"cube has {cube.bands} bands, weights expect {c.bands}")
    x = cube.data.astype(np.float64) / c.scale
    p = layer_norm(_linear(x, weights, "embed.lin"), _w(weights, "embed.ln_g"), _w(weights, "embed.ln_b"))
    return TokenGrid(p, p.reshape(-1, c.dim).mean(axis=0))


def _s2a_core(queries, qpos, ref_p, scale_p, ref_g, value_map, value_g, weights, prefix, wrap=False,
              return_weights=False):
    """Shared deformable attention: ``linear(q + concat_m v^m)``.

    ``ref_p`` ``(Q, 2)`` and ``scale_p`` ``(Q, 2)`` place pixel-map points at
    ``ref_p + (init + offset) * scale_p``; global points sit at
    ``ref_g + init + offset``.
    """
    c = weights.config
    m, k, ch = c.heads, c.points, c.head_dim
    nq = queries.shape[0]
    off = _linear(qpos, weights, f"{prefix}.off").reshape(nq, m, 2, k, 2)
    att = attention_weights(_linear(qpos, weights, f"{prefix}.attn").reshape(nq, m, 2 * k))
    init = initial_offsets(m, k)[None]
    pos_p = ref_p[:, None, None, :] + (init + off[:, :, 0]) * scale_p[:, None, None, :]
    pos_g = ref_g[:, None, None, :] + init + off[:, :, 1]
    heads = np.arange(m)[None, :, None]
    samp_p = _gather_bilinear(value_map, pos_p[..., 0], pos_p[..., 1], heads, wrap)   # (Q, M, K, ch)
    samp_g = self_excited_value(value_g[None, :, None, :], (pos_g[..., 0], pos_g[..., 1]))
    v = (att[..., :k, None] * samp_p).sum(2) + (att[..., k:, None] * samp_g).sum(2)
    out = _linear(queries + v.reshape(nq, m * ch), weights, f"{prefix}.out")
    return (out, att) if return_weights else out


def _global_ref(coords, width, height):
    return 2.0 * (np.asarray(coords, dtype=np.float64) + 0.5) / np.array([width, height]) - 1.0


def _pixel_coords(height, width):
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([cols, rows], axis=-1).astype(np.float64)


def self_s2a(tokens: TokenGrid, weights: ModelWeights, prefix: str = "enc0", coords=None,
             wrap: bool = False, query_slice: slice | None = None, return_weights: bool = False):
    """Self-S2A output for every pixel token followed by the global token.

    ``coords`` (``(H, W, 2)``, default the index grid) drives the position
    embedding and the global-space reference; pixel-map sampling is always
    anchored at each token's own grid position.  The global token queries
    from the image centre with a zero position embedding.
    """
    c = weights.config
    h, w = tokens.height, tokens.width
    grid = _pixel_coords(h, w)
    coords = grid if coords is None else np.asarray(coords, dtype=np.float64)
    centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    q = np.concatenate([tokens.pixels.reshape(-1, c.dim), tokens.global_token[None]])
    pos = np.concatenate([position_embedding(coords.reshape(-1, 2), c.dim), np.zeros((1, c.dim))])
    ref_p = np.concatenate([grid.reshape(-1, 2), centre[None]])
    ref_g = np.concatenate([_global_ref(coords.reshape(-1, 2), w, h), np.zeros((1, 2))])
    sel = query_slice or slice(None)
    q, pos, ref_p, ref_g = q[sel], pos[sel], ref_p[sel], ref_g[sel]
    vmap = _linear(tokens.pixels, weights, f"{prefix}.val").reshape(h, w, c.heads, c.head_dim)
    vg = _linear(tokens.global_token, weights, f"{prefix}.val").reshape(c.heads, c.head_dim)
    return _s2a_core(q, q + pos, ref_p, np.ones_like(ref_p), ref_g, vmap, vg, weights, prefix, wrap,
                     return_weights)


def _post_attention(f, attn_out, weights, prefix):
    f1 = layer_norm(attn_out + f, _w(weights, f"{prefix}.ln1_g"), _w(weights, f"{prefix}.ln1_b"))
    hidden = np.maximum(_linear(f1, weights, f"{prefix}.ffn1"), 0.0)
    return layer_norm(_linear(hidden, weights, f"{prefix}.ffn2") + f1,
                      _w(weights, f"{prefix}.ln2_g"), _w(weights, f"{prefix}.ln2_b"))


ENC_CHUNK = 4096


def encoder_layer(tokens: TokenGrid, weights: ModelWeights, index: int, coords=None, wrap: bool = False,
                  workers: int = 1) -> TokenGrid:
    """``F~ = LN(S2A(F) + F)``, then ``F = LN(FFN(F~) + F~)``, over pixel and global tokens."""
    c = weights.config
    prefix = f"enc{index}"
    n = tokens.height * tokens.width + 1
    f = np.concatenate([tokens.pixels.reshape(-1, c.dim), tokens.global_token[None]])

    def job(start):
        sl = slice(start, min(start + ENC_CHUNK, n))
        return _post_attention(f[sl], self_s2a(tokens, weights, prefix, coords, wrap, sl), weights, prefix)

    starts = range(0, n, ENC_CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    out = np.concatenate(parts)
    return TokenGrid(out[:-1].reshape(tokens.pixels.shape), out[-1])


def encode(tokens: TokenGrid, weights: ModelWeights, coords=None, wrap: bool = False,
           workers: int = 1) -> TokenGrid:
    for j in range(weights.config.enc_layers):
        tokens = encoder_layer(tokens, weights, j, coords, wrap, workers)
    return tokens


def _breg(x, weights, prefix):
    h = np.maximum(_linear(x, weights, f"{prefix}.breg0"), 0.0)
    h = np.maximum(_linear(h, weights, f"{prefix}.breg1"), 0.0)
    return _linear(h, weights, f"{prefix}.breg2")


def _cls(x, weights, prefix):
    return sigmoid(_linear(x, weights, f"{prefix}.cls"))


def init_anchors(tokens: TokenGrid, weights: ModelWeights, q_match: int | None = None) -> AnchorState:
    """Per-pixel anchors refined by the first heads; keep the ``q_match`` most confident.

    The anchor centre is the pixel centre, ``((col + 0.5)/W, (row + 0.5)/H)``.
    Ties in confidence keep raster order.
    """
    c = weights.config
    h, w = tokens.height, tokens.width
    q_match = c.q_match if q_match is None else q_match
    q_match = min(q_match, h * w)
    if q_match < 1:
        raise ValueError("q_match must be >= 1")
    p = tokens.pixels.reshape(-1, c.dim)
    grid = _pixel_coords(h, w).reshape(-1, 2)
    b_int = np.column_stack([
        (grid[:, 0] + 0.5) / w, (grid[:, 1] + 0.5) / h,
        np.full(h * w, c.anchor_size / w), np.full(h * w, c.anchor_size / h),
    ])
    boxes = sigmoid(_breg(p, weights, "head0") + inverse_sigmoid(b_int))
    scores = _cls(p, weights, "head0")
    keep = np.argsort(-scores.max(axis=1), kind="stable")[:q_match]
    return AnchorState(boxes[keep], scores[keep], np.ones((q_match, c.dim)))


def decode_layer(state: AnchorState, tokens: TokenGrid, weights: ModelWeights, index: int,
                 prev_undetached: np.ndarray | None = None) -> tuple[AnchorState, np.ndarray]:
    """One decoder layer.  Returns the new state (boxes are the ``pred`` boxes) and the
    undetached boxes to feed the next layer.

    Detachment only affects gradients, so the refined and detached boxes are
    numerically equal here; both are kept to mirror the training recurrence.
    """
    c = weights.config
    prefix = f"dec{index}"
    h, w = tokens.height, tokens.width
    boxes = state.boxes
    prev_hat = boxes if prev_undetached is None else prev_undetached
    ref_p = np.column_stack([boxes[:, 0] * w - 0.5, boxes[:, 1] * h - 0.5])
    scale_p = np.column_stack([boxes[:, 2] * w, boxes[:, 3] * h]) / (2.0 * c.points)
    ref_g = 2.0 * boxes[:, :2] - 1.0
    q = state.queries
    qpos = q + position_embedding(ref_p, c.dim)
    vmap = _linear(tokens.pixels, weights, f"{prefix}.val").reshape(h, w, c.heads, c.head_dim)
    vg = _linear(tokens.global_token, weights, f"{prefix}.val").reshape(c.heads, c.head_dim)
    attn = _s2a_core(q, qpos, ref_p, scale_p, ref_g, vmap, vg, weights, prefix)
    q_new = _post_attention(q, attn, weights, prefix)
    delta = _breg(q_new, weights, prefix)
    b_hat = sigmoid(delta + inverse_sigmoid(boxes))
    b_detached = b_hat.copy()
    b_pred = sigmoid(delta + inverse_sigmoid(prev_hat))
    return AnchorState(b_detached, _cls(q_new, weights, prefix), q_new), b_pred


def _decode_all(tokens: TokenGrid, weights: ModelWeights, history: list | None = None) -> AnchorState:
    state = init_anchors(tokens, weights)
    prev_hat = None
    pred = state.boxes
    for d in range(1, weights.config.dec_layers + 1):
        new_state, pred = decode_layer(state, tokens, weights, d, prev_hat)
        prev_hat = new_state.boxes
        state = new_state
        if history is not None:
            history.append((new_state.boxes, pred))
    return AnchorState(pred, state.scores, state.queries)


def run_forward(cube: HyperCube, weights: ModelWeights, image_id: int = 0, workers: int = 1) -> list[Detection]:
    """Tokenize, encode, decode, keep the ``top_k`` (box, class) pairs, class-wise NMS."""
    from .assign import nms_indices

    validate_weights(weights)
    c = weights.config
    tokens = encode(tokenize(cube, weights), weights, workers=workers)
    final = _decode_all(tokens, weights)
    flat = final.scores.ravel()
    order = np.argsort(-flat, kind="stable")[:c.top_k]
    qi, ci = np.divmod(order, c.num_classes)
    scale = np.array([cube.width, cube.height, cube.width, cube.height], dtype=np.float64)
    boxes_px = final.boxes[qi] * scale
    dets = []
    for cls in np.unique(ci):
        idx = np.flatnonzero(ci == cls)
        keep = nms_indices(boxes_px[idx], flat[order[idx]], c.nms_iou)
        for j in idx[keep]:
            dets.append(Detection(BBox(*(float(v) for v in boxes_px[j])), int(cls), float(flat[order[j]]), image_id))
    dets.sort(key=lambda d: -d.confidence)
    return dets


def run_forward_batch(cubes, weights: ModelWeights, workers: int = 1) -> list[list[Detection]]:
    """Independent forward passes; image ``i`` gets ``image_id = i``."""
    jobs = list(enumerate(cubes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda t: run_forward(t[1], weights, t[0]), jobs))
    return [run_forward(cube, weights, i) for i, cube in jobs]


# ---------------------------------------------------------------------------
# Self-check
# ---------------------------------------------------------------------------


def check_invariants(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Numerical invariants on random inputs; ``(name, passed, detail)`` per check."""
    rng = np.random.default_rng(seed)
    results = []

    a, b = rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000)
    eps = np.stack(bilinear_weights(a, b))
    err = float(np.abs(eps.sum(0) - 1).max())
    results.append(("bilinear weights are a convex combination", bool(eps.min() >= 0 and err < 1e-9), f"max |sum-1| = {err:.2e}"))

    g = rng.normal(size=5)
    pts = rng.uniform(-4, 4, size=(1000, 2))
    vals = self_excited_value(g, (pts[:, 0], pts[:, 1]))
    outside = np.abs(pts).max(axis=1) >= 2
    inside = np.abs(pts).max(axis=1) <= 1
    ok = np.all(vals[outside] == 0) and np.allclose(vals[inside], g)
    results.append(("self-excited operator support", bool(ok), f"{int(outside.sum())} inactive samples"))

    cfg = KernelConfig(bands=3, num_classes=2, dim=16, heads=8, points=2, enc_layers=1, dec_layers=2, q_match=6)
    wts = init_weights(cfg, seed)
    cube = HyperCube(rng.uniform(0, 1, (4, 5, 3)).astype(np.float32), unit="reflectance")
    tok = tokenize(cube, wts)
    _, att = self_s2a(tok, wts, return_weights=True)
    err = float(np.abs(att.sum(-1) - 1).max())
    results.append(("attention weights sum to one per head", err < 1e-12, f"max |sum-1| = {err:.2e}"))

    tok = encode(tok, wts)
    state = init_anchors(tok, wts)
    perm = rng.permutation(state.boxes.shape[0])
    s1, _ = decode_layer(state, tok, wts, 1)
    s2, _ = decode_layer(AnchorState(state.boxes[perm], state.scores[perm], state.queries[perm]), tok, wts, 1)
    ok = np.allclose(s1.boxes[perm], s2.boxes) and np.allclose(s1.scores[perm], s2.scores)
    results.append(("decoder is permutation equivariant", bool(ok), "one layer, random permutation"))

    hist: list = []
    _decode_all(tok, wts, hist)
    inside = all(np.all((bx > 0) & (bx < 1)) and np.all((bp > 0) & (bp < 1)) for bx, bp in hist)
    results.append(("decoder boxes stay in (0,1)", bool(inside), f"{len(hist)} layers"))
    return results
