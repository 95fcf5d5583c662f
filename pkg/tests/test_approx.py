import numpy as np
import pytest

from faultsim import approx, model as mdl
from faultsim.approx import ProjectionCache, backward_block_neighbor, lowrank_wgrad, refresh_projections
from faultsim.errors import ContractViolation
from faultsim.linalg import SvdConfig, seeded_gaussian, top_r_right_singular_vectors

from oracles import detached_ffn_backward, tensor_rel_err

CFG = mdl.ModelConfig(vocab=16, hidden=16, heads=4, ffn_intermediate=32, layers=1, seq_len=6)
FULL_RANK = max(CFG.hidden, CFG.ffn_intermediate)


def _block_setup(seed, std=0.1, batch=2):
    weights = mdl.init_weights(CFG, seed=seed, std=std)
    rng = np.random.Generator(np.random.PCG64(seed + 100))
    x = rng.normal(size=(batch * CFG.seq_len, CFG.hidden))
    dy = rng.normal(size=(batch * CFG.seq_len, CFG.hidden))
    lw = weights.layers[0]
    _, cache = mdl.forward_block(CFG, lw, x, mdl.CACHE_FFN_INPUT_ONLY)
    return lw, x, dy, cache


class TestLowrankWgrad:
    def test_square_orthonormal_basis_is_exact(self):
        rng = np.random.Generator(np.random.PCG64(0))
        g_y = rng.normal(size=(6, 9))
        x = rng.normal(size=(5, 9))
        v1, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        out = lowrank_wgrad(g_y, x, v1)
        exact = g_y @ x.T
        assert tensor_rel_err(out, exact) < 1e-10

    def test_single_basis_vector_projection(self):
        rng = np.random.Generator(np.random.PCG64(1))
        g_y = rng.normal(size=(4, 7))
        x = rng.normal(size=(3, 7))
        e1 = np.eye(3)[:, :1]
        out = lowrank_wgrad(g_y, x, e1)
        assert np.linalg.matrix_rank(out) <= 1
        exact = g_y @ x.T
        expected = np.zeros_like(exact)
        expected[:, 0] = exact[:, 0]
        assert tensor_rel_err(out, expected) < 1e-12

    def test_matches_naive_formula_oracle(self):
        rng = np.random.Generator(np.random.PCG64(2))
        m, n, b, r = 6, 5, 7, 2
        w = rng.normal(size=(m, n))
        g_y = rng.normal(size=(m, b))
        x = rng.normal(size=(n, b))
        v1 = top_r_right_singular_vectors(w, SvdConfig(rank=r, seed=3))
        out = lowrank_wgrad(g_y, x, v1)
        oracle = (g_y @ x.T) @ v1 @ v1.T  # same formula, different association
        assert tensor_rel_err(out, oracle) < 1e-12

    def test_shape_checks(self):
        with pytest.raises(ContractViolation):
            lowrank_wgrad(np.ones((3, 4)), np.ones((2, 5)), np.ones((2, 1)))
        with pytest.raises(ContractViolation):
            lowrank_wgrad(np.ones((3, 4)), np.ones((2, 4)), np.ones((3, 1)))

    def test_projection_idempotence(self):
        rng = np.random.Generator(np.random.PCG64(4))
        g_y = rng.normal(size=(5, 6))
        x = rng.normal(size=(4, 6))
        v1 = top_r_right_singular_vectors(rng.normal(size=(5, 4)), SvdConfig(rank=2, seed=5))
        out = lowrank_wgrad(g_y, x, v1)
        reprojected = out @ v1 @ v1.T
        assert tensor_rel_err(reprojected, out) < 1e-12

    def test_error_orthogonal_to_basis(self):
        rng = np.random.Generator(np.random.PCG64(6))
        g_y = rng.normal(size=(5, 8))
        x = rng.normal(size=(6, 8))
        v1 = top_r_right_singular_vectors(rng.normal(size=(5, 6)), SvdConfig(rank=3, seed=7))
        err = g_y @ x.T - lowrank_wgrad(g_y, x, v1)
        assert np.max(np.abs(err @ v1)) < 1e-10

    def test_residual_monotone_in_rank(self):
        rng = np.random.Generator(np.random.PCG64(8))
        for case in range(4):
            w = rng.normal(size=(6, 5))
            g_y = rng.normal(size=(6, 9))
            x = rng.normal(size=(5, 9))
            exact = g_y @ x.T
            resid = []
            for r in range(1, 6):
                v1 = top_r_right_singular_vectors(w, SvdConfig(rank=r, seed=case))
                resid.append(np.linalg.norm(exact - lowrank_wgrad(g_y, x, v1), "fro"))
            assert all(resid[i] >= resid[i + 1] - 1e-9 for i in range(len(resid) - 1))


class TestProjectionRefresh:
    def test_tau_one_refreshes_every_step(self):
        lw, x, dy, cache = _block_setup(0)
        proj = ProjectionCache(rank=4, refresh_period=1)
        svd = SvdConfig(rank=4, seed=0)
        for _ in range(5):
            backward_block_neighbor(CFG, lw, cache, dy, proj=proj, svd=svd)
        assert proj.refreshes == 5
        assert proj.step == 5

    def test_tau_100_single_refresh_in_100_steps(self):
        lw, x, dy, cache = _block_setup(1)
        proj = ProjectionCache(rank=4, refresh_period=100)
        svd = SvdConfig(rank=4, seed=0)
        for _ in range(100):
            backward_block_neighbor(CFG, lw, cache, dy, proj=proj, svd=svd)
        assert proj.refreshes == 1
        assert proj.svd_calls == 3  # one per feedforward matrix
        assert proj.step == 100

    def test_reset_forces_immediate_refresh(self):
        lw, x, dy, cache = _block_setup(2)
        proj = ProjectionCache(rank=4, refresh_period=100)
        svd = SvdConfig(rank=4, seed=0)
        for _ in range(7):
            backward_block_neighbor(CFG, lw, cache, dy, proj=proj, svd=svd)
        proj.reset()
        assert proj.step == 0 and not proj.basis
        backward_block_neighbor(CFG, lw, cache, dy, proj=proj, svd=svd)
        assert proj.refreshes == 2

    def test_step_advances_only_on_neighbor_backward(self):
        lw, x, dy, cache = _block_setup(3)
        proj = ProjectionCache(rank=4, refresh_period=10)
        svd = SvdConfig(rank=4, seed=0)
        refresh_projections(proj, lw, svd)  # refresh alone does not advance
        assert proj.step == 0
        backward_block_neighbor(CFG, lw, cache, dy, proj=proj, svd=svd)
        assert proj.step == 1
        backward_block_neighbor(CFG, lw, cache, dy, proj=None)
        assert proj.step == 1


class TestNeighborBackward:
    def test_requires_lean_cache(self):
        weights = mdl.init_weights(CFG, seed=0)
        rng = np.random.Generator(np.random.PCG64(0))
        x = rng.normal(size=(CFG.seq_len, CFG.hidden))
        _, cache = mdl.forward_block(CFG, weights.layers[0], x, mdl.CACHE_FULL)
        with pytest.raises(ContractViolation):
            backward_block_neighbor(CFG, weights.layers[0], cache, x)

    def test_matches_detached_graph_oracle_at_full_rank(self):
        lw, x, dy, cache = _block_setup(5)
        proj = ProjectionCache(rank=FULL_RANK, refresh_period=1)
        svd = SvdConfig(rank=1, tolerance=1e-13, max_iterations=3000, seed=0)
        dx, grads = backward_block_neighbor(CFG, lw, cache, dy, proj=proj, svd=svd)

        x3 = x.reshape(-1, CFG.seq_len, CFG.hidden)
        dy3 = dy.reshape(-1, CFG.seq_len, CFG.hidden)
        dx_oracle, grads_oracle = detached_ffn_backward(lw, x3, cache.x1, dy3)
        assert tensor_rel_err(dx, dx_oracle.reshape(dx.shape)) < 1e-10
        for kind in ("gate", "up", "down", "norm_ffn"):
            assert tensor_rel_err(grads[kind], grads_oracle[kind]) < 1e-10, kind

    def test_attention_entries_absent(self):
        lw, x, dy, cache = _block_setup(6)
        _, grads = backward_block_neighbor(CFG, lw, cache, dy, proj=None)
        assert set(grads) == {"gate", "up", "down", "norm_ffn"}

    def test_recomputed_intermediates_bit_identical(self):
        lw, x, dy, _ = _block_setup(7)
        _, cache_full = mdl.forward_block(CFG, lw, x, mdl.CACHE_FULL)
        recomputed = approx.recompute_ffn(lw, cache_full.x1)
        for key, val in cache_full.full["ffn"].items():
            assert np.array_equal(val, recomputed[key]), key

    def test_zero_input_zero_weights(self):
        weights = mdl.zero_weights(CFG)
        inter = approx.recompute_ffn(weights.layers[0], np.zeros((1, CFG.seq_len, CFG.hidden)))
        assert not inter["down"].any()

    def test_exact_wgrad_mode_bitwise_equals_full_cache_ffn_grads(self):
        lw, x, dy, cache_lean = _block_setup(8)
        _, cache_full = mdl.forward_block(CFG, lw, x, mdl.CACHE_FULL)
        _, g_lean = backward_block_neighbor(CFG, lw, cache_lean, dy, proj=None)
        _, g_full = mdl.backward_block_exact(CFG, lw, cache_full, dy)
        for kind in ("gate", "up", "down", "norm_ffn"):
            assert np.array_equal(g_lean[kind], g_full[kind]), kind
