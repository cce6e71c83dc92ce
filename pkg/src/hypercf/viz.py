"""Item-embedding colorization.

Compresses d-dimensional item embeddings to RGB triples with a small
two-layer perceptron trained under two pulls: a self-discrimination
classifier that predicts each item's own id from its 3-d code (so the colors
keep as much of the embedding information as possible) and a penalty on the
squared distance to the nearest palette color (so the picture stays readable
in a few pre-chosen hues).

The gradients here are written out in closed form on plain numpy arrays; the
tape engine is matrix-only and has no softmax or log primitives, and this
side task does not justify adding them. Parameters still live in autodiff
leaf tensors so the Adam implementation from the trainer can be reused as-is.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .rng import STREAM_COLOR, spawn_rng
from .trainer import Adam
from .evaluation import write_csv

DEFAULT_PALETTE = (
    (0.85, 0.25, 0.25),   # red
    (0.25, 0.65, 0.30),   # green
    (0.25, 0.40, 0.85),   # blue
    (0.90, 0.75, 0.20),   # yellow
    (0.75, 0.30, 0.75),   # magenta
    (0.30, 0.70, 0.80),   # cyan
)


class VizError(ValueError):
    """Invalid colorization inputs."""


def _as_palette(palette) -> np.ndarray:
    arr = np.asarray(palette, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise VizError(f"palette must have shape (P, 3), got {arr.shape}")
    if arr.shape[0] < 2:
        raise VizError(f"palette must contain at least 2 colors, got {arr.shape[0]}")
    if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
        raise VizError("palette colors must be finite RGB values in [0, 1]")
    return arr


def _init_params(d: int, n: int, rng) -> dict:
    def leaf(shape, scale):
        return ad.parameter(rng.normal(0.0, scale, size=shape), dtype=np.float64)

    return {
        "W1": leaf((d, d), 1.0 / np.sqrt(d)),
        "b1": leaf((1, d), 0.0),
        "W2": leaf((d, 3), 1.0 / np.sqrt(d)),
        "b2": leaf((1, 3), 0.0),
        "W3": leaf((3, n), 1.0 / np.sqrt(3)),
        "b3": leaf((1, n), 0.0),
    }


def _colors_of(params: dict, x: np.ndarray) -> np.ndarray:
    hidden = np.tanh(x @ params["W1"].value + params["b1"].value)
    pre = hidden @ params["W2"].value + params["b2"].value
    return 1.0 / (1.0 + np.exp(-pre))


def _loss_and_grads(params: dict, x: np.ndarray, palette: np.ndarray,
                    mu: float) -> float:
    """Full-batch loss; writes gradients into each parameter's ``.grad``."""
    n = x.shape[0]
    w1, b1 = params["W1"].value, params["b1"].value
    w2, b2 = params["W2"].value, params["b2"].value
    w3, b3 = params["W3"].value, params["b3"].value

    hidden = np.tanh(x @ w1 + b1)                       # (n, d)
    pre = hidden @ w2 + b2                              # (n, 3)
    colors = 1.0 / (1.0 + np.exp(-pre))
    logits = colors @ w3 + b3                           # (n, n): id classifier
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    idx = np.arange(n)
    ce = -np.mean(np.log(probs[idx, idx] + 1e-300))

    diff = colors[:, None, :] - palette[None, :, :]     # (n, P, 3)
    dist = np.sum(diff * diff, axis=2)
    nearest = np.argmin(dist, axis=1)
    pal = float(np.mean(dist[idx, nearest]))
    loss = ce + mu * pal

    d_logits = probs.copy()
    d_logits[idx, idx] -= 1.0
    d_logits /= n
    params["W3"].grad[...] = colors.T @ d_logits
    params["b3"].grad[...] = d_logits.sum(axis=0, keepdims=True)
    d_colors = d_logits @ w3.T
    d_colors += (2.0 * mu / n) * (colors - palette[nearest])
    d_pre = d_colors * colors * (1.0 - colors)
    params["W2"].grad[...] = hidden.T @ d_pre
    params["b2"].grad[...] = d_pre.sum(axis=0, keepdims=True)
    d_hidden = d_pre @ w2.T
    d_pre1 = d_hidden * (1.0 - hidden * hidden)
    params["W1"].grad[...] = x.T @ d_pre1
    params["b1"].grad[...] = d_pre1.sum(axis=0, keepdims=True)
    return loss


def embedding_to_color(embeddings, palette=DEFAULT_PALETTE, steps: int = 400,
                       mu: float = 1.0, lr: float = 1e-2,
                       seed: int = 0) -> np.ndarray:
    """Map each embedding row to an RGB triple in [0, 1]^3.

    ``steps`` full-batch Adam iterations form the training budget. Memory is
    O(n^2) in the number of items because of the id-classifier logits, which
    is fine at case-study scale but rules out very large catalogs.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise VizError(f"embeddings must be a nonempty 2-D array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise VizError("embeddings contain NaN or Inf")
    pal = _as_palette(palette)
    if steps < 0:
        raise VizError(f"steps must be >= 0, got {steps}")

    rng = spawn_rng(seed, STREAM_COLOR)
    params = _init_params(x.shape[1], x.shape[0], rng)
    opt = Adam(params, lr=lr)
    for _ in range(steps):
        _loss_and_grads(params, x, pal, mu)
        opt.step(params)
    return np.clip(_colors_of(params, x), 0.0, 1.0)


def write_colors_csv(path: str, colors: np.ndarray, item_ids=None) -> None:
    """Export one ``item-id,r,g,b`` row per item."""
    colors = np.asarray(colors, dtype=np.float64)
    if colors.ndim != 2 or colors.shape[1] != 3:
        raise VizError(f"colors must have shape (n, 3), got {colors.shape}")
    if item_ids is None:
        item_ids = np.arange(colors.shape[0])
    item_ids = np.asarray(item_ids)
    if item_ids.shape != (colors.shape[0],):
        raise VizError("item_ids must align with the color rows")
    rows = [{"item-id": item_ids[i], "r": colors[i, 0], "g": colors[i, 1],
             "b": colors[i, 2]} for i in range(colors.shape[0])]
    write_csv(path, rows, ["item-id", "r", "g", "b"])
