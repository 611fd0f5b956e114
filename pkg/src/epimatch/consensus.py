"""Local feature consensus: attention over each correspondence's neighbours.

The block gathers the k nearest neighbours of every row in feature space,
forms edge features ``[f_i || f_i - f_j]``, lets a small multi-head
self-attention re-weigh them ("consensus"), and collapses the k boosted edge
vectors back to one feature per row with a learned softmax over neighbour
slots.  Neighbour indices are recomputed from the current features on every
forward pass but are constants as far as gradients are concerned.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import KTooLargeError

Array = np.ndarray


def knn_graph(features: Array, k: int) -> Array:
    """Indices (n, k) of each row's k nearest other rows.

    Squared euclidean distances, self excluded, exact ties resolved toward
    the lower index.  Selection goes through argpartition so only k + 1
    candidates per row are fully sorted; rows with an exact distance tie on
    the selection border fall back to a stable sort of the whole row, which
    keeps the tie rule intact for duplicated inputs.
    """
    f = np.asarray(features, dtype=np.float64)
    n = f.shape[0]
    if not 1 <= k <= n - 1:
        raise KTooLargeError(f"k={k} with {n} rows")
    sq = (f * f).sum(axis=1)
    d2 = sq[:, None] - 2.0 * (f @ f.T) + sq[None, :]
    np.fill_diagonal(d2, np.inf)
    cols = np.broadcast_to(np.arange(n), d2.shape)
    if k == n - 1:
        return np.lexsort((cols, d2), axis=-1)[:, :k]
    cand = np.argpartition(d2, k, axis=1)[:, :k + 1]
    vals = np.take_along_axis(d2, cand, axis=1)
    order = np.lexsort((cand, vals), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    vals = np.take_along_axis(vals, order, axis=1)
    border = vals[:, k - 1]
    loose = np.flatnonzero((d2 == border[:, None]).sum(axis=1)
                           > (vals == border[:, None]).sum(axis=1))
    out = cand[:, :k]
    if loose.size:
        redo = np.lexsort((cols[loose], d2[loose]), axis=-1)[:, :k]
        out = out.copy()
        out[loose] = redo
    return out


def edge_features(f: Node, graph: Array) -> Node:
    """(n, k, 2d) edges: centre feature next to centre-minus-neighbour.

    Fused into a single graph node; building this out of gather, tile and
    concat primitives spends most of its time copying large temporaries.
    """
    f = ad.wrap(f)
    fv = f.value
    n, d = fv.shape
    idx = np.asarray(graph)
    out = np.empty((n, idx.shape[1], 2 * d))
    out[:, :, :d] = fv[:, None, :]
    out[:, :, d:] = fv[:, None, :] - fv[idx]

    def vjp(g):
        gd = g[:, :, d:]
        df = (g[:, :, :d] + gd).sum(axis=1)
        flat = (idx.ravel()[:, None] * d + np.arange(d)).ravel()
        df -= np.bincount(flat, weights=gd.ravel(), minlength=n * d).reshape(n, d)
        return df

    return Node(out, ((f, vjp),))


def consensus(edges: Node, head_ws: list[Node], w_out: Node) -> Node:
    """Self-attention over each row's k edges, heads concatenated then mixed.

    Every head projects the (k, 2d) edge block to (k, d/h), attends with
    scores ``softmax(t t^T / sqrt(d/h))`` and returns the re-weighted
    projections; ``w_out`` mixes the concatenated heads back to d channels.
    Projections run on (n*k, .) views so they hit one large matmul each.
    """
    n, k, two_d = edges.value.shape
    flat = ad.reshape(edges, (n * k, two_d))
    outs = []
    for w in head_ws:
        t = ad.reshape(ad.matmul(flat, w), (n, k, -1))
        dh = t.value.shape[-1]
        scores = ad.scale(ad.matmul(t, ad.transpose(t)), 1.0 / np.sqrt(dh))
        outs.append(ad.matmul(ad.softmax_rows(scores), t))
    cat = outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)
    mixed = ad.matmul(ad.reshape(cat, (n * k, -1)), w_out)
    return ad.reshape(mixed, (n, k, -1))


def deformable_fuse(f: Node, boosted: Node, w_fuse: Node) -> Node:
    """Convex combination of the k boosted edges, weights from the centre.

    ``w_fuse`` is (k, d); the centre feature picks softmax weights over the
    k neighbour slots, so the output is a convex combination per row.
    """
    scores = ad.matmul(f, ad.transpose(w_fuse))     # (n, k)
    omega = ad.softmax_rows(scores)
    n, k = omega.value.shape
    return ad.reduce_sum(ad.mul(ad.reshape(omega, (n, k, 1)), boosted), axis=1)


def lfc_block(f: Node, head_ws: list[Node], w_out: Node, w_fuse: Node, k: int) -> Node:
    """Full consensus block: knn -> edges -> attention -> fuse, (n, d) out."""
    graph = knn_graph(f.value, k)
    edges = edge_features(f, graph)
    boosted = consensus(edges, head_ws, w_out)
    return deformable_fuse(f, boosted, w_fuse)
