"""Edge-solidity estimation: meta-network-adapted key transforms, the
two-layer scoring head producing labels in (0, 1), local dot-product
predictions, and the pairwise solidity-ranking loss.

Labels come from the hypergraph side (keys and hyperedge features) and can be
treated either as constants (teacher-student mode) or as live tape nodes
(joint mode); the caller decides by detaching before calling sa_loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .transformer import DEFAULT_SLOPE, head_slices


@dataclass
class MetaNetParams:
    """Weight-generating network for one side's key adaptation.

    v1 is the d x d x d contraction tensor stored row-major as (d*d) x d;
    contracting it with the mean hyperedge embedding yields the d x d
    adapted weight added on top of w0.
    """

    v1: Optional[ad.Tensor]   # (d*d) x d
    w0: ad.Tensor             # d x d
    v2: Optional[ad.Tensor]   # d x d
    b0: ad.Tensor             # 1 x d

    @property
    def dim(self) -> int:
        return self.w0.rows


@dataclass
class SolidityHead:
    """Two-layer scorer mapping a pair of adapted keys to a label in (0, 1)."""

    d_vec: ad.Tensor   # d x 1
    t: ad.Tensor       # d x 2d
    c: ad.Tensor       # 1 x d


def assemble_keys(parts) -> ad.Tensor:
    """Concatenate per-head key slices back into full key vectors.

    With one head this is the identity. The concatenation reconstructs the
    unsliced transform product, which is what the label branch consumes.
    """
    if isinstance(parts, ad.Tensor):
        return parts
    out = parts[0]
    for part in parts[1:]:
        out = ad.concat_cols(out, part)
    return out


def split_heads(keys: ad.Tensor, heads: int):
    return [ad.slice_cols(keys, lo, hi)
            for lo, hi in head_slices(keys.cols, heads)]


def mean_hyperedge(z_table: ad.Tensor) -> ad.Tensor:
    """Mean pooling of the K hyperedge rows, as a d x 1 column."""
    k = z_table.rows
    pool = ad.constant(np.full((1, k), 1.0 / k, dtype=z_table.value.dtype))
    return ad.transpose(ad.matmul(pool, z_table))


def meta_transform(x: ad.Tensor, z_table: ad.Tensor, p: MetaNetParams,
                   slope: float = DEFAULT_SLOPE) -> ad.Tensor:
    """Adapt key vectors with weights generated from the hyperedge summary.

    Rows of ``x`` are key vectors; the output row i is
    sigma(W x_i + b) with W = contract(v1, z-mean) + w0, b = v2 z-mean + b0.
    """
    d = p.dim
    if x.cols != d:
        raise ad.ShapeMismatchError(
            f"meta_transform: keys {x.value.shape} vs weight dim {d}")
    z_bar = mean_hyperedge(z_table)
    w = ad.add(ad.tensor_contract(p.v1, z_bar, out_rows=d), p.w0)
    b = ad.add(ad.transpose(ad.matmul(p.v2, z_bar)), p.b0)
    return ad.leaky_relu(ad.add_bias(ad.matmul(x, ad.transpose(w)), b), slope)


def plain_transform(x: ad.Tensor, p: MetaNetParams,
                    slope: float = DEFAULT_SLOPE) -> ad.Tensor:
    """Meta-network ablation: a fixed shared perceptron on the keys."""
    return ad.leaky_relu(
        ad.add_bias(ad.matmul(x, ad.transpose(p.w0)), p.b0), slope)


def solidity_label(gamma_u: ad.Tensor, gamma_v: ad.Tensor, head: SolidityHead,
                   slope: float = DEFAULT_SLOPE) -> ad.Tensor:
    """Label per edge: sigm(d . sigma(T [G_u; G_v] + G_u + G_v + c))."""
    if gamma_u.value.shape != gamma_v.value.shape:
        raise ad.ShapeMismatchError(
            f"solidity_label: {gamma_u.value.shape} vs {gamma_v.value.shape}")
    both = ad.concat_cols(gamma_u, gamma_v)
    inner = ad.add_bias(
        ad.add(ad.matmul(both, ad.transpose(head.t)),
               ad.add(gamma_u, gamma_v)),
        head.c)
    return ad.sigmoid(ad.matmul(ad.leaky_relu(inner, slope), head.d_vec))


def solidity_predict(user_rows: ad.Tensor, item_rows: ad.Tensor) -> ad.Tensor:
    """Local estimate per edge: dot product of the endpoint embeddings."""
    return ad.dot_rows(user_rows, item_rows)


def sa_loss(pred_1: ad.Tensor, pred_2: ad.Tensor,
            label_1: ad.Tensor, label_2: ad.Tensor) -> ad.Tensor:
    """Pairwise ranking transfer: sum of max(0, 1 - (dpred * dlabel)).

    The label gap scales the gradient on the predictions, so near-equal
    labels contribute (almost) no ranking pressure. Detach the labels before
    calling to keep the label branch out of the gradient.
    """
    for name, t in (("pred_1", pred_1), ("pred_2", pred_2),
                    ("label_1", label_1), ("label_2", label_2)):
        if t.cols != 1 or t.rows != pred_1.rows:
            raise ad.ShapeMismatchError(
                f"sa_loss: {name} must be {pred_1.rows}x1, got {t.value.shape}")
    product = ad.hadamard(ad.sub(pred_1, pred_2), ad.sub(label_1, label_2))
    return ad.sum_all(ad.hinge(ad.add_scalar(ad.scale(product, -1.0), 1.0)))
