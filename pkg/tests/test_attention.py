import math

import numpy as np
import pytest

from relicforge.attention import (
    ConditioningEmbeddings,
    Stage,
    StreamingAttention,
    ToyBlock,
    ToyConfig,
    apply_rope,
    attend,
    encode_actions,
    encode_poses,
    group_actions,
    inject_conditioning,
    latent_groups,
    merge_heads,
    split_heads,
)
from relicforge.cache import DEFAULT_SCHEDULE, CompressionSchedule
from relicforge.errors import ContractError, ShapeError
from relicforge.masks import build_block_causal_mask
from relicforge.synthetic import smooth_trajectory


def rope_oracle(x, pos, base=10000.0):
    # treat each feature pair as a complex number and multiply by e^{i p theta_k}
    hd = x.shape[-1]
    z = x[..., 0::2] + 1j * x[..., 1::2]
    theta = np.array([base ** (-2.0 * k / hd) for k in range(hd // 2)])
    z = z * np.exp(1j * np.asarray(pos)[:, None] * theta)
    out = np.empty(x.shape)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def attend_oracle(q, k, v, mask):
    """Row-by-row softmax loop over one head."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        qi = q[i] / np.linalg.norm(q[i])
        scores = []
        for j in range(k.shape[0]):
            if mask[i, j]:
                kj = k[j] / np.linalg.norm(k[j])
                scores.append((j, float(qi @ kj) / math.sqrt(q.shape[1])))
        if not scores:
            continue
        m = max(s for _, s in scores)
        z = sum(math.exp(s - m) for _, s in scores)
        for j, s in scores:
            out[i] += math.exp(s - m) / z * v[j]
    return out


# ---- config and rope

def test_config_validation():
    with pytest.raises(ValueError):
        ToyConfig(d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        ToyConfig(d_model=12, n_heads=4)   # head_dim 3


def test_rope_zero_position_is_identity(rng):
    x = rng.normal(size=(5, 8))
    np.testing.assert_array_equal(apply_rope(x, np.zeros(5)), x)


def test_rope_matches_complex_oracle(rng):
    x = rng.normal(size=(2, 6, 16))
    pos = rng.uniform(0, 100, size=6)
    np.testing.assert_allclose(apply_rope(x, pos), rope_oracle(x, pos), atol=1e-12)


def test_rope_pair_norms(rng):
    x = rng.normal(size=(50, 8))
    y = apply_rope(x, rng.uniform(-1e3, 1e3, size=50))
    np.testing.assert_allclose(np.hypot(y[:, 0::2], y[:, 1::2]), np.hypot(x[:, 0::2], x[:, 1::2]),
                               rtol=0, atol=1e-12)


def test_rope_relative_position(rng):
    q, k = rng.normal(size=(1, 16)), rng.normal(size=(1, 16))
    for _ in range(200):
        p1, p2 = rng.uniform(0, 500, size=2)
        shift = rng.uniform(-300, 300)
        a = apply_rope(q, [p1]) @ apply_rope(k, [p2]).T
        b = apply_rope(q, [p1 + shift]) @ apply_rope(k, [p2 + shift]).T
        assert abs(a - b).item() < 1e-9


def test_rope_odd_dim():
    with pytest.raises(ValueError):
        apply_rope(np.ones((2, 3)), [0, 1])


# ---- attend

def test_attend_singleton_and_symmetry():
    q = np.array([[1.0, 2.0]])
    v = np.array([[3.0, -1.0, 4.0]])
    np.testing.assert_allclose(attend(q, q, v), v)
    v2 = np.array([[1.0, 0.0], [0.0, 2.0]])
    out = attend(q, np.vstack([q, q]), v2)
    np.testing.assert_allclose(out, [[0.5, 1.0]], atol=1e-15)


def test_attend_matches_naive_loop(rng):
    q, k, v = rng.normal(size=(7, 8)), rng.normal(size=(11, 8)), rng.normal(size=(11, 5))
    mask = rng.random((7, 11)) < 0.6
    mask[0] = False
    np.testing.assert_allclose(attend(q, k, v, mask), attend_oracle(q, k, v, mask), rtol=0, atol=1e-9)


def test_masked_row_is_zero_and_weights_sum_to_one(rng):
    q, k = rng.normal(size=(4, 6)), rng.normal(size=(5, 6))
    mask = np.ones((4, 5), bool)
    mask[2] = False
    out = attend(q, k, np.ones((5, 1)), mask)
    np.testing.assert_array_equal(out[2], 0.0)
    np.testing.assert_allclose(np.delete(out, 2, axis=0), 1.0, rtol=0, atol=1e-12)


def test_attend_shape_errors(rng):
    with pytest.raises(ShapeError):
        attend(np.ones((2, 4)), np.ones((3, 5)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        attend(np.ones((2, 4)), np.ones((3, 4)), np.ones((3, 2)), np.ones((2, 2), bool))


# ---- conditioning

def test_latent_groups():
    assert latent_groups(1) == [(0, 1)]
    assert latent_groups(9) == [(0, 1), (1, 5), (5, 9)]
    assert len(latent_groups(10)) == 4


def test_group_means_loop_oracle(rng):
    a = rng.random((23, 13))
    means = group_actions(a)
    assert len(means) == math.ceil((23 - 1) / 4) + 1
    oracle = [a[0]]
    for start in range(1, 23, 4):
        rows = [a[t] for t in range(start, min(start + 4, 23))]
        oracle.append(sum(rows) / len(rows))
    np.testing.assert_allclose(means, np.array(oracle), rtol=0, atol=1e-12)


def test_encode_actions_counts(rng):
    static = np.zeros((1, 13))
    static[0, 12] = 1
    assert encode_actions(static, 16).shape == (1, 16)
    assert encode_actions(rng.random((9, 13)), 16).shape == (3, 16)
    assert np.array_equal(encode_actions(static, 16, seed=3), encode_actions(static, 16, seed=3))


def test_encode_poses_injective_enough(rng):
    traj = smooth_trajectory(rng, 17)
    e = encode_poses(traj, 32)
    assert e.shape == (5, 32) and np.all(np.isfinite(e))
    assert np.linalg.matrix_rank(e) == 5


def _qkv(rng, n=6, d=16):
    return rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d))


def test_zero_embeddings_are_identity(rng):
    q, k, v = _qkv(rng)
    lat = np.array([0, 0, 1, 1, 2, 2])
    emb = ConditioningEmbeddings(np.zeros((3, 16)), np.zeros((3, 16)))
    q2, k2, v2 = inject_conditioning((q, k, v), emb, "pre-attention-qk", lat)
    np.testing.assert_array_equal(q2, q)
    np.testing.assert_array_equal(k2, k)
    h = inject_conditioning(q, emb, "post-attention", lat)
    np.testing.assert_array_equal(h, q)


def test_pose_injection_leaves_values_untouched(rng):
    q, k, v = _qkv(rng)
    before = v.tobytes()
    lat = np.array([0, 0, 1, 1, 2, 2])
    pose = rng.normal(size=(3, 16))
    q2, k2, v2 = inject_conditioning((q, k, v), ConditioningEmbeddings(pose_embedding=pose),
                                     Stage.PRE_ATTENTION_QK, lat)
    assert v2 is v and v2.tobytes() == before
    np.testing.assert_array_equal(q2, q + pose[lat])
    np.testing.assert_array_equal(k2, k + pose[lat])


def test_injection_contract_errors(rng):
    q, k, v = _qkv(rng)
    lat = np.zeros(6, int)
    only_pose = ConditioningEmbeddings(pose_embedding=np.zeros((1, 16)))
    only_action = ConditioningEmbeddings(action_embedding=np.zeros((1, 16)))
    with pytest.raises(ContractError):
        inject_conditioning((q, k, v), only_action, "pre-attention-qk", lat)
    with pytest.raises(ContractError):
        inject_conditioning(q, only_pose, "post-attention", lat)
    with pytest.raises(ContractError):
        inject_conditioning((q, k, v), ConditioningEmbeddings(np.zeros((1, 16)), np.zeros((1, 16))),
                            "post-attention", lat)
    with pytest.raises(ContractError):
        inject_conditioning((q, k, v), only_pose, "pre-attention-v", lat)


@pytest.mark.parametrize("before_rope", [True, False])
def test_block_matches_composition_oracle(rng, before_rope):
    cfg = ToyConfig(d_model=16, n_heads=2, pose_before_rope=before_rope)
    block = ToyBlock(cfg, seed=4)
    lat = np.repeat(np.arange(3), [2, 3, 2])
    x = rng.normal(size=(len(lat), 16))
    emb = ConditioningEmbeddings(rng.normal(size=(3, 16)), rng.normal(size=(3, 16)))
    mask = build_block_causal_mask([2, 3, 2])
    got = block.forward(x, lat, emb, mask)

    hd = cfg.head_dim
    q, k, v = x @ block.wq, x @ block.wk, x @ block.wv
    if before_rope:
        q, k = q + emb.pose_embedding[lat], k + emb.pose_embedding[lat]
    attn = np.zeros_like(x)
    for h in range(cfg.n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        qh, kh = rope_oracle(q[:, sl], lat), rope_oracle(k[:, sl], lat)
        if not before_rope:
            qh, kh = qh + emb.pose_embedding[lat][:, sl], kh + emb.pose_embedding[lat][:, sl]
        attn[:, sl] = attend_oracle(qh, kh, v[:, sl], mask)
    expected = x + attn @ block.wo + emb.action_embedding[lat]
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-9)


def test_head_split_round_trip(rng):
    x = rng.normal(size=(5, 12))
    np.testing.assert_array_equal(merge_heads(split_heads(x, 3)), x)


# ---- streaming

def pool_oracle(grid, s):
    h, w, d = grid.shape
    out = np.zeros((-(-h // s), -(-w // s), d))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = grid[i * s:i * s + s, j * s:j * s + s].reshape(-1, d).mean(axis=0)
    return out


def batch_recompute(cfg, factors, window, qs, ks, vs):
    """Per-step outputs from scratch: history older than the window is pooled."""
    hd = cfg.head_dim
    outs = []
    for i in range(len(qs)):
        keys, vals = [], []
        for j in range(i + 1):
            kj = np.concatenate([rope_oracle(ks[j].reshape(-1, cfg.d_model)[:, h * hd:(h + 1) * hd],
                                             np.full(ks[j].shape[0] * ks[j].shape[1], j))
                                 for h in range(cfg.n_heads)], axis=1).reshape(ks[j].shape)
            vj = vs[j]
            if j < i - window:
                s = factors[j % len(factors)]
                kj, vj = pool_oracle(kj, s), pool_oracle(vj, s)
            keys.append(kj.reshape(-1, cfg.d_model))
            vals.append(vj.reshape(-1, cfg.d_model))
        K, V = np.concatenate(keys), np.concatenate(vals)
        Q = qs[i].reshape(-1, cfg.d_model)
        out = np.zeros_like(Q)
        mask = np.ones((len(Q), len(K)), bool)
        for h in range(cfg.n_heads):
            sl = slice(h * hd, (h + 1) * hd)
            qh = rope_oracle(Q[:, sl], np.full(len(Q), i))
            out[:, sl] = attend_oracle(qh, K[:, sl], V[:, sl], mask)
        outs.append(out.reshape(qs[i].shape))
    return outs


def _rollout(rng, n, grid=(5, 6), d=8):
    return [[rng.normal(size=grid + (d,)) for _ in range(n)] for _ in range(3)]


def test_streaming_first_step_is_self_attention(rng):
    cfg = ToyConfig(d_model=8, n_heads=2)
    eng = StreamingAttention(cfg, CompressionSchedule(DEFAULT_SCHEDULE, 3))
    (q,), (k,), (v,) = _rollout(rng, 1)
    out = eng.step(q, k, v)
    expected = merge_heads(attend(split_heads(q.reshape(-1, 8), 2), split_heads(k.reshape(-1, 8), 2),
                                  split_heads(v.reshape(-1, 8), 2)))
    np.testing.assert_allclose(out.reshape(-1, 8), expected, atol=1e-12)


def test_streaming_large_window_is_full_causal(rng):
    cfg = ToyConfig(d_model=8, n_heads=2)
    n = 6
    qs, ks, vs = _rollout(rng, n, grid=(3, 4))
    eng = StreamingAttention(cfg, CompressionSchedule(DEFAULT_SCHEDULE, 20))
    got = np.concatenate([eng.step(q, k, v).reshape(-1, 8) for q, k, v in zip(qs, ks, vs)])
    lat = np.repeat(np.arange(n), 12)
    Q = split_heads(np.concatenate([q.reshape(-1, 8) for q in qs]), 2)
    K = split_heads(np.concatenate([k.reshape(-1, 8) for k in ks]), 2)
    V = split_heads(np.concatenate([v.reshape(-1, 8) for v in vs]), 2)
    full = attend(apply_rope(Q, lat), apply_rope(K, lat), V, build_block_causal_mask([12] * n))
    np.testing.assert_allclose(got, merge_heads(full), rtol=0, atol=1e-9)


def test_streaming_twelve_steps_schedule_prefix(rng):
    cfg = ToyConfig(d_model=8, n_heads=2)
    factors = DEFAULT_SCHEDULE[:6]
    qs, ks, vs = _rollout(rng, 12, grid=(5, 9))
    eng = StreamingAttention(cfg, CompressionSchedule(factors, 3))
    got = [eng.step(q, k, v) for q, k, v in zip(qs, ks, vs)]
    want = batch_recompute(cfg, factors, 3, qs, ks, vs)
    assert max(np.abs(g - w).max() for g, w in zip(got, want)) < 1e-6
    eng.cache.check()


def test_streaming_shape_drift(rng):
    cfg = ToyConfig(d_model=8, n_heads=2)
    eng = StreamingAttention(cfg, CompressionSchedule())
    eng.step(*(rng.normal(size=(2, 3, 8)) for _ in range(3)))
    with pytest.raises(ShapeError):
        eng.step(*(rng.normal(size=(2, 4, 8)) for _ in range(3)))
    with pytest.raises(ShapeError):
        eng.step(rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 3, 4)))
