"""Topology-aware embeddings: two sparse GCN passes plus additive fusion.

The user side is built as A (A^T E_u) + A E_v and the item side symmetrically;
the two intermediate products are shared, so both sides cost four sparse
multiplies total and the I x I two-hop operator is never materialized.
"""

from __future__ import annotations

from . import autodiff as ad
from .data import NormalizedAdjacency


def topo_embed(e_user: ad.Tensor, e_item: ad.Tensor,
               adj: NormalizedAdjacency):
    """Two-layer light-weight graph convolution over the bipartite graph.

    Isolated nodes have empty adjacency rows and therefore get zero output.
    """
    num_users, num_items = adj.matrix.shape
    if e_user.rows != num_users or e_item.rows != num_items:
        raise ad.ShapeMismatchError(
            f"topo_embed: adjacency {adj.matrix.shape} does not match "
            f"embeddings {e_user.shape} / {e_item.shape}")
    if e_user.cols != e_item.cols:
        raise ad.ShapeMismatchError(
            f"topo_embed: embedding widths differ: {e_user.shape} vs {e_item.shape}")

    hop_u = ad.spmm(adj.pair_t, e_user)   # J x d: items gather from users
    hop_v = ad.spmm(adj.pair, e_item)     # I x d: users gather from items
    topo_user = ad.add(ad.spmm(adj.pair, hop_u), hop_v)
    topo_item = ad.add(ad.spmm(adj.pair_t, hop_v), hop_u)
    return topo_user, topo_item


def fuse_inputs(e_user, e_item, topo_user, topo_item):
    """Elementwise sum of id embeddings and topology embeddings, per side."""
    return ad.add(e_user, topo_user), ad.add(e_item, topo_item)
