"""
Bi-directional cross-modal attention and series pooling tests.
"""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import ConfigurationError
from app.network.CrossModalFusion import AttentionPooling, BidirectionalCrossAttention
from reference_math import check_parameter_gradients, feed_forward, gelu, layer_norm, linear, mha, softmax


def scrambled(module):
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn_like(p) * 0.3)
    return module


def small_fusion() -> BidirectionalCrossAttention:
    return scrambled(BidirectionalCrossAttention(visual_dim=6, metadata_dim=4, dim=8, out_dim=5,
                                                 heads=2, ff_expansion=2)).double()


def oracle_fusion(fusion: BidirectionalCrossAttention, V: np.ndarray, M: np.ndarray) -> np.ndarray:
    v = linear(V, fusion.visual_proj)
    m = linear(M, fusion.metadata_proj)
    v_att, _ = mha(v, m, m, fusion.visual_attn)
    m_att, _ = mha(m, v, v, fusion.metadata_attn)
    v_out = layer_norm(v_att + v + feed_forward(v_att + v, fusion.visual_ff), fusion.visual_norm)
    m_out = layer_norm(m_att + m + feed_forward(m_att + m, fusion.metadata_ff), fusion.metadata_norm)
    return gelu(layer_norm(linear(np.concatenate([v_out, m_out], axis=-1), fusion.fuse), fusion.fuse_norm))


@given(st.integers(1, 6), st.integers(0, 2 ** 16))
@settings(max_examples=100, deadline=None)
def test_fusion_matches_oracle(S, seed):
    torch.manual_seed(seed)
    fusion = small_fusion()
    V = torch.randn(S, 6, dtype=torch.float64)
    M = torch.randn(S, 4, dtype=torch.float64)
    np.testing.assert_allclose(fusion(V, M).detach().numpy(), oracle_fusion(fusion, V.numpy(), M.numpy()),
                               rtol=0, atol=1e-6)


def test_single_slice_fusion():
    fusion = small_fusion()
    assert fusion(torch.randn(1, 6, dtype=torch.float64), torch.randn(1, 4, dtype=torch.float64)).shape == (1, 5)


def test_zero_fusion_projection_gives_zero_rows():
    fusion = BidirectionalCrossAttention(visual_dim=6, metadata_dim=4, dim=8, out_dim=5, heads=2)
    with torch.no_grad():
        fusion.fuse.weight.zero_()
        fusion.fuse.bias.zero_()
    out = fusion(torch.randn(3, 6), torch.randn(3, 4))
    assert torch.count_nonzero(out) == 0


def test_fusion_dimension_errors():
    fusion = small_fusion()
    with pytest.raises(ConfigurationError):
        fusion(torch.randn(3, 6, dtype=torch.float64), torch.randn(2, 4, dtype=torch.float64))
    with pytest.raises(ConfigurationError):
        fusion(torch.randn(3, 5, dtype=torch.float64), torch.randn(3, 4, dtype=torch.float64))


@given(st.data())
@settings(max_examples=200, deadline=None)
def test_joint_permutation_equivariance(data):
    S = data.draw(st.integers(1, 7), label="slices")
    B = data.draw(st.integers(1, 3), label="batch")
    perm = torch.tensor(data.draw(st.permutations(range(S)), label="perm"))
    torch.manual_seed(data.draw(st.integers(0, 2 ** 16), label="seed"))
    fusion = small_fusion()
    pool = scrambled(AttentionPooling(5, 4)).double()
    V = torch.randn(B, S, 6, dtype=torch.float64)
    M = torch.randn(B, S, 4, dtype=torch.float64)

    fused = fusion(V, M)
    fused_perm = fusion(V[:, perm], M[:, perm])
    torch.testing.assert_close(fused_perm, fused[:, perm], atol=1e-6, rtol=0)
    torch.testing.assert_close(pool(fused_perm).series_embedding, pool(fused).series_embedding,
                               atol=1e-6, rtol=0)


# ============================================================================
# POOLING
# ============================================================================

def test_identical_rows_pool_uniformly():
    pool = scrambled(AttentionPooling(5, 4)).double()
    row = torch.randn(5, dtype=torch.float64)
    out = pool(row.repeat(4, 1))
    torch.testing.assert_close(out.pool_weights, torch.full((4,), 0.25, dtype=torch.float64))
    torch.testing.assert_close(out.series_embedding, row)


def test_single_row_pool():
    pool = AttentionPooling(5, 4)
    row = torch.randn(1, 5)
    out = pool(row)
    torch.testing.assert_close(out.pool_weights, torch.ones(1))
    torch.testing.assert_close(out.series_embedding, row[0])


@given(st.integers(1, 8), st.integers(0, 2 ** 16))
@settings(max_examples=100, deadline=None)
def test_pool_matches_oracle(S, seed):
    torch.manual_seed(seed)
    pool = scrambled(AttentionPooling(5, 4)).double()
    fused = torch.randn(S, 5, dtype=torch.float64)
    first, _, second = pool.score
    logits = linear(gelu(linear(fused.numpy(), first)), second)[:, 0]
    weights = softmax(logits)
    out = pool(fused)
    np.testing.assert_allclose(out.pool_weights.detach().numpy(), weights, rtol=0, atol=1e-6)
    np.testing.assert_allclose(out.series_embedding.detach().numpy(), weights @ fused.numpy(), rtol=0, atol=1e-6)


@given(st.integers(1, 12), st.integers(0, 2 ** 16))
@settings(max_examples=40, deadline=None)
def test_pooled_embedding_in_convex_hull(S, seed):
    torch.manual_seed(seed)
    pool = scrambled(AttentionPooling(5, 4)).double()
    fused = torch.randn(S, 5, dtype=torch.float64) * 3
    out = pool(fused)
    assert (out.pool_weights >= 0).all() and (out.pool_weights <= 1).all()
    assert abs(float(out.pool_weights.sum()) - 1.0) < 1e-6
    assert (out.series_embedding >= fused.min(dim=0).values - 1e-9).all()
    assert (out.series_embedding <= fused.max(dim=0).values + 1e-9).all()


def test_fusion_and_pool_gradients():
    fusion = small_fusion()
    pool = scrambled(AttentionPooling(5, 4)).double()
    V = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
    M = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda v, m: pool(fusion(v, m)).series_embedding, (V, M),
                                    eps=1e-6, atol=1e-5)


def test_fusion_and_pool_parameter_gradients_match_central_differences():
    fusion = small_fusion()
    pool = scrambled(AttentionPooling(5, 4)).double()
    model = torch.nn.ModuleDict({"fusion": fusion, "pool": pool})
    gen = torch.Generator().manual_seed(5)
    V = torch.randn(3, 6, dtype=torch.float64, generator=gen)
    M = torch.randn(3, 4, dtype=torch.float64, generator=gen)
    weights = torch.randn(5, dtype=torch.float64, generator=gen)
    checked = check_parameter_gradients(model, lambda: (pool(fusion(V, M)).series_embedding * weights).sum(),
                                        ["fusion", "pool"])
    assert checked == len(list(model.parameters()))
