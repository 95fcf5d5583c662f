"""Cheap backward pass for nodes running a doubled workload.

Three pieces: (i) the attention branch is skipped during backpropagation and
the activation gradient flows through the residual identity only; (ii) the
feedforward intermediates are recomputed from the saved mid-block stream x1;
(iii) feedforward weight gradients are projected onto the top-r right singular
subspace of the weight itself, with the projection basis refreshed every
`refresh_period` local steps and reused in between.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .errors import ContractViolation
from .linalg import SvdConfig, check_matrix, top_r_right_singular_vectors

FFN_KINDS = mdl.FFN_WEIGHT_KINDS


def lowrank_wgrad(g_y: np.ndarray, x: np.ndarray, v1: np.ndarray) -> np.ndarray:
    """Approximate weight gradient g_y @ x.T projected onto span(v1).

    Shapes: g_y (m, b), x (n, b), v1 (n, r). Computed as
    g_y @ (x.T @ v1) @ v1.T, in exactly that association order, which costs
    2brn + 2brm + 2rmn flops instead of the exact product's 2bmn.
    """
    g_y = check_matrix(g_y, "g_y")
    x = check_matrix(x, "x")
    v1 = check_matrix(v1, "v1")
    if g_y.shape[1] != x.shape[1]:
        raise ContractViolation(
            f"g_y and x batch dims differ: {g_y.shape} vs {x.shape}"
        )
    if v1.shape[0] != x.shape[0]:
        raise ContractViolation(
            f"v1 rows must match x rows: {v1.shape} vs {x.shape}"
        )
    return (g_y @ (x.T @ v1)) @ v1.T


@dataclass
class ProjectionCache:
    """Per-(rank, layer) projection state for the feedforward matrices.

    `step` is the local step counter; it resets to zero when the owning node
    adopts the layer after a failover, which forces a refresh on the next
    neighbor-mode backward.
    """

    rank: int
    refresh_period: int
    step: int = 0
    basis: dict[str, np.ndarray] = field(default_factory=dict)
    svd_calls: int = 0
    refreshes: int = 0

    def reset(self) -> None:
        self.step = 0
        self.basis.clear()


def refresh_projections(cache: ProjectionCache, lw: mdl.LayerWeights, svd: SvdConfig) -> None:
    """Recompute the per-kind bases if the local step is due, else reuse.

    Due means step % refresh_period == 0 (so a freshly reset cache always
    refreshes). Does not advance the step counter; the backward step does.
    """
    if cache.refresh_period < 1:
        raise ContractViolation("refresh_period must be >= 1")
    if cache.step % cache.refresh_period != 0 and cache.basis:
        return
    cache.refreshes += 1
    for kind in FFN_KINDS:
        w = lw.kind(kind)
        rank = min(cache.rank, w.shape[1])
        cfg = SvdConfig(
            rank=rank,
            tolerance=svd.tolerance,
            max_iterations=svd.max_iterations,
            seed=svd.seed,
        )
        cache.basis[kind] = top_r_right_singular_vectors(w, cfg)
        cache.svd_calls += 1


def recompute_ffn(lw: mdl.LayerWeights, x1: np.ndarray) -> dict:
    """Recompute feedforward intermediates from the saved input stream.

    Same kernel as the forward pass, so results are bit-identical to what a
    full cache would have stored.
    """
    return mdl.ffn_forward(lw, x1)


def backward_block_neighbor(
    cfg: mdl.ModelConfig,
    lw: mdl.LayerWeights,
    cache: mdl.BlockCache,
    dy,
    proj: ProjectionCache | None = None,
    svd: SvdConfig | None = None,
):
    """Neighbor-mode block backward from an ffn-input-only cache.

    Feedforward gradients are computed from recomputed intermediates (exactly,
    or low-rank-projected when `proj` is given); the attention sub-block is
    skipped, so dx is the identity-path gradient and no attention-side entries
    appear in the returned gradient dict. Advances proj.step by one.
    """
    if cache.mode != mdl.CACHE_FFN_INPUT_ONLY:
        raise ContractViolation("neighbor backward requires an ffn-input-only cache")
    dy3 = mdl._to_btm(cfg, dy)

    wgrad = None
    if proj is not None:
        if svd is None:
            raise ContractViolation("projection refresh needs an SvdConfig")
        refresh_projections(proj, lw, svd)
        basis = proj.basis

        def wgrad(kind, d2, inp2):
            return lowrank_wgrad(d2.T, inp2.T, basis[kind])

    inter = recompute_ffn(lw, cache.x1)
    dx1_ffn, grads = mdl.ffn_backward(lw, cache.x1, inter, dy3, wgrad=wgrad)
    dx1 = dy3 + dx1_ffn

    if proj is not None:
        proj.step += 1
    return (dx1.reshape(dy.shape) if dy.ndim == 2 else dx1), grads
