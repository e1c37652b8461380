"""Goal policy: pooling, extraction, aggregation, decoding, gradients, io."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gridexplore.policy import (
    GoalDistribution,
    PolicyConfig,
    PolicyParams,
    actor_backward,
    actor_forward,
    aggregate_relations,
    argmax_goal,
    comm_bytes_per_peer,
    compression_ratio,
    critic_backward,
    critic_forward,
    d_logits_entropy,
    d_logits_log_prob,
    decode_action,
    entropy,
    extract_features,
    goal_cell_for_index,
    grads_to_vector,
    init_params,
    load_checkpoint,
    log_prob,
    normalize_pooled,
    pool_observation,
    sample_goal,
    sample_goal_index,
    save_checkpoint,
    value_estimate,
)

SMALL = PolicyConfig(s=15, g=3, channels_out=2, hidden=8)


def random_setup(seed: int, n_peers: int = 2):
    rng = np.random.default_rng(seed)
    params = init_params(SMALL, rng)
    params.values["feat_mean"] = rng.normal(size=7) * 0.1
    params.values["feat_var"] = rng.uniform(0.5, 2.0, size=7)
    own = rng.normal(size=(7, SMALL.g, SMALL.g))
    peers = [rng.normal(size=(7, SMALL.g, SMALL.g)) for _ in range(n_peers)]
    return rng, params, own, peers


def fd_gradient(params: PolicyParams, scalar_fn, h: float = 1e-5) -> np.ndarray:
    base = params.to_vector()
    grad = np.zeros_like(base)
    for i in range(base.size):
        vec = base.copy()
        vec[i] = base[i] + h
        params.from_vector(vec)
        up = scalar_fn()
        vec[i] = base[i] - h
        params.from_vector(vec)
        down = scalar_fn()
        grad[i] = (up - down) / (2.0 * h)
    params.from_vector(base)
    return grad


def assert_close_relative(analytic: np.ndarray, numeric: np.ndarray,
                          rel: float = 1e-4) -> None:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    worst = float(np.max(np.abs(analytic - numeric) / scale))
    assert worst <= rel, f"worst relative gradient error {worst:.3e}"


# ---- compression and communication accounting ----


def test_compression_ratio_large_map():
    assert compression_ratio(25, 5) == pytest.approx(1.0 - 100.0 / 4375.0, abs=1e-12)
    assert compression_ratio(25, 5) == pytest.approx(0.977142857, abs=1e-9)


def test_compression_ratio_small_map():
    assert compression_ratio(15, 5) == pytest.approx(1.0 - 100.0 / 1575.0, abs=1e-12)
    assert compression_ratio(15, 5) == pytest.approx(0.936507936, abs=1e-9)


def test_compression_ratio_degenerate_grid():
    assert compression_ratio(5, 5) == pytest.approx(3.0 / 7.0, abs=1e-12)
    with pytest.raises(ValueError):
        compression_ratio(4, 5)


def test_comm_bytes_by_mode():
    base = dict(s=15, g=5, channels_out=4, hidden=64)
    assert comm_bytes_per_peer(PolicyConfig(comm_mode="none", **base)) == 0
    assert comm_bytes_per_peer(PolicyConfig(comm_mode="compressed", **base)) == 400
    assert comm_bytes_per_peer(PolicyConfig(comm_mode="perfect", **base)) == 15 * 15 * 7 * 4


def test_policy_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(s=15, g=5, channels_out=3)
    with pytest.raises(ValueError):
        PolicyConfig(s=4, g=5)
    with pytest.raises(ValueError):
        PolicyConfig(s=15, g=5, comm_mode="loud")


def test_policy_config_padding_arithmetic():
    assert PolicyConfig(s=15, g=5).padded_size == 15
    assert PolicyConfig(s=15, g=5).alpha == 3
    assert PolicyConfig(s=25, g=5).alpha == 5
    assert PolicyConfig(s=7, g=5).padded_size == 10
    assert PolicyConfig(s=7, g=5).alpha == 2


# ---- pooling and normalization ----


def test_pool_shapes_nominal_and_adaptive():
    cfg = PolicyConfig(s=15, g=5)
    assert pool_observation(np.ones((7, 15, 15)), cfg).shape == (7, 5, 5)
    # a 25x25 observation pools through the same config unchanged
    assert pool_observation(np.ones((7, 25, 25)), cfg).shape == (7, 5, 5)


def test_pool_constant_channel_exact_fit():
    cfg = PolicyConfig(s=15, g=5)
    pooled = pool_observation(np.full((7, 15, 15), 0.25), cfg)
    np.testing.assert_allclose(pooled, 0.25)


def test_pool_matches_block_average_oracle():
    rng = np.random.default_rng(9001)
    cfg = PolicyConfig(s=15, g=5)
    for size in (15, 25, 7):
        info = rng.normal(size=(7, size, size))
        pooled = pool_observation(info, cfg)
        alpha = -(-size // cfg.g)
        pad = alpha * cfg.g
        canvas = np.zeros((7, pad, pad))
        canvas[:, :size, :size] = info
        for c in range(7):
            for by in range(cfg.g):
                for bx in range(cfg.g):
                    block = canvas[c, by * alpha:(by + 1) * alpha,
                                   bx * alpha:(bx + 1) * alpha]
                    assert pooled[c, by, bx] == pytest.approx(block.mean(), abs=1e-12)


def test_pool_rejects_non_square():
    with pytest.raises(ValueError):
        pool_observation(np.zeros((7, 15, 14)), PolicyConfig(s=15, g=5))


def test_normalize_uses_running_stats():
    _, params, own, _ = random_setup(9002)
    mean = params["feat_mean"][:, None, None]
    var = params["feat_var"][:, None, None]
    expected = (own - mean) / np.sqrt(var + 1e-8)
    np.testing.assert_allclose(normalize_pooled(own, params), expected, rtol=1e-12)


# ---- forward blocks ----


def test_extract_zero_input_zero_bias_gives_zero():
    params = PolicyParams.zeros(SMALL)
    params.values["w_ex"][:] = 0.7
    emb, _ = extract_features(np.zeros((7, 3, 3)), params)
    np.testing.assert_array_equal(emb, np.zeros((2, 3, 3)))


def test_extract_is_shared_across_agents():
    _, params, own, _ = random_setup(9003)
    a, _ = extract_features(own, params)
    b, _ = extract_features(own.copy(), params)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (SMALL.channels_out, SMALL.g, SMALL.g)


def test_aggregate_no_peers_concatenates_zero_half():
    _, params, own, _ = random_setup(9004)
    emb, _ = extract_features(own, params)
    fused, _ = aggregate_relations(emb, [], params)
    c = emb.shape[0]
    np.testing.assert_array_equal(fused[:c], emb)
    np.testing.assert_array_equal(fused[c:], np.zeros_like(emb))


def test_aggregate_duplicate_peer_invariance():
    rng, params, own, peers = random_setup(9005, n_peers=1)
    emb, _ = extract_features(own, params)
    peer, _ = extract_features(peers[0], params)
    once, _ = aggregate_relations(emb, [peer], params)
    twice, _ = aggregate_relations(emb, [peer, peer.copy()], params)
    np.testing.assert_allclose(once, twice, rtol=1e-12)


def test_aggregate_permutation_invariance():
    rng = np.random.default_rng(9006)
    params = init_params(SMALL, rng)
    embs = [rng.normal(size=(2, 3, 3)) for _ in range(3)]
    own = rng.normal(size=(2, 3, 3))
    a, _ = aggregate_relations(own, embs, params)
    b, _ = aggregate_relations(own, embs[::-1], params)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_decode_zero_head_is_uniform():
    cfg = PolicyConfig(s=15, g=5, channels_out=4, hidden=16)
    params = PolicyParams.zeros(cfg)
    dist, _ = decode_action(np.zeros((8, 5, 5)), params, cfg)
    np.testing.assert_allclose(dist.probs, np.full(25, 0.04), atol=1e-12)


def test_decode_shift_invariance():
    _, params, own, peers = random_setup(9007)
    emb, _ = extract_features(own, params)
    fused, _ = aggregate_relations(emb, [], params)
    base, _ = decode_action(fused, params, SMALL)
    params.values["b2"] += 3.7
    shifted, _ = decode_action(fused, params, SMALL)
    np.testing.assert_allclose(base.probs, shifted.probs, rtol=1e-9)


def test_init_decoder_starts_near_uniform():
    rng, params, own, peers = random_setup(9008)
    result = actor_forward(own, peers, params, SMALL)
    assert entropy(result.dist) > 0.99 * math.log(SMALL.g * SMALL.g)


def test_value_zero_params_is_zero():
    params = PolicyParams.zeros(SMALL)
    v, _ = value_estimate(np.random.default_rng(0).normal(size=(4, 3, 3)), params)
    assert v == 0.0


def test_critic_value_invariant_to_peer_permutation():
    _, params, own, peers = random_setup(9009, n_peers=3)
    a = critic_forward(own, peers, params, SMALL).value
    b = critic_forward(own, peers[::-1], params, SMALL).value
    assert a == pytest.approx(b, rel=1e-12)


def test_goal_distribution_rejects_bad_sum():
    with pytest.raises(ValueError):
        GoalDistribution(probs=np.full(25, 0.03), g=5)


# ---- distribution helpers ----


def test_uniform_log_prob_and_entropy():
    dist = GoalDistribution(probs=np.full(25, 0.04), g=5)
    assert log_prob(dist, 7) == pytest.approx(math.log(0.04))
    assert entropy(dist) == pytest.approx(math.log(25.0))


def test_logit_gradient_formulas_match_finite_differences():
    rng = np.random.default_rng(9010)
    logits = rng.normal(size=9)

    def probs_of(z):
        e = np.exp(z - z.max())
        return e / e.sum()

    probs = probs_of(logits)
    h = 1e-6
    for target, analytic in (
        (lambda z: math.log(probs_of(z)[4]), d_logits_log_prob(probs, 4)),
        (lambda z: float(-(probs_of(z) * np.log(probs_of(z))).sum()),
         d_logits_entropy(probs)),
    ):
        fd = np.zeros(9)
        for i in range(9):
            up, down = logits.copy(), logits.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (target(up) - target(down)) / (2 * h)
        np.testing.assert_allclose(analytic, fd, atol=1e-7)


def test_sample_frequencies_match_distribution():
    rng = np.random.default_rng(9011)
    probs = np.array([0.5, 0.2, 0.2, 0.1])
    dist = GoalDistribution(probs=probs, g=2)
    n = 20000
    counts = np.bincount(
        [sample_goal_index(dist, rng) for _ in range(n)], minlength=4
    )
    for k in range(4):
        sigma = math.sqrt(probs[k] * (1 - probs[k]) / n)
        assert abs(counts[k] / n - probs[k]) <= 3 * sigma


def test_goal_cell_geometry():
    # 15-wide map with G=5 has 3-cell blocks, centers at offset 1
    assert goal_cell_for_index(0, 5, (15, 15)) == (1, 1)
    assert goal_cell_for_index(24, 5, (15, 15)) == (13, 13)
    # 25-wide map has 5-cell blocks, centers at offset 2
    assert goal_cell_for_index(0, 5, (25, 25)) == (2, 2)
    assert goal_cell_for_index(24, 5, (25, 25)) == (22, 22)
    # non-square map: block edge follows the larger dimension, centers clamp
    assert goal_cell_for_index(24, 5, (25, 15)) == (22, 14)


def test_goal_cell_identity_when_grid_matches_map():
    for idx in range(9):
        gy, gx = divmod(idx, 3)
        assert goal_cell_for_index(idx, 3, (3, 3)) == (gx, gy)


def test_point_mass_sampling_and_argmax():
    probs = np.zeros(25)
    probs[0] = 1.0
    dist = GoalDistribution(probs=probs, g=5)
    rng = np.random.default_rng(0)
    assert sample_goal(dist, rng, (15, 15)) == (1, 1)
    assert argmax_goal(dist, (15, 15)) == (1, 1)


# ---- analytic gradients vs finite differences ----


def test_actor_log_prob_gradient_matches_fd():
    for seed in (1, 2, 3):
        _, params, own, peers = random_setup(seed)
        index = seed + 1

        def scalar():
            result = actor_forward(own, peers, params, SMALL)
            return log_prob(result.dist, index)

        forward = actor_forward(own, peers, params, SMALL)
        grads = params.grad_zeros()
        actor_backward(forward, d_logits_log_prob(forward.dist.probs, index),
                       params, grads)
        assert_close_relative(grads_to_vector(params, grads), fd_gradient(params, scalar))


def test_actor_entropy_gradient_matches_fd():
    _, params, own, peers = random_setup(11)

    def scalar():
        return entropy(actor_forward(own, peers, params, SMALL).dist)

    forward = actor_forward(own, peers, params, SMALL)
    grads = params.grad_zeros()
    actor_backward(forward, d_logits_entropy(forward.dist.probs), params, grads)
    assert_close_relative(grads_to_vector(params, grads), fd_gradient(params, scalar))


def test_actor_gradient_without_peers_matches_fd():
    _, params, own, _ = random_setup(12, n_peers=0)

    def scalar():
        return log_prob(actor_forward(own, [], params, SMALL).dist, 0)

    forward = actor_forward(own, [], params, SMALL)
    grads = params.grad_zeros()
    actor_backward(forward, d_logits_log_prob(forward.dist.probs, 0), params, grads)
    assert_close_relative(grads_to_vector(params, grads), fd_gradient(params, scalar))


def test_critic_gradient_matches_fd():
    for seed in (21, 22):
        _, params, own, peers = random_setup(seed)

        def scalar():
            return critic_forward(own, peers, params, SMALL).value

        forward = critic_forward(own, peers, params, SMALL)
        grads = params.grad_zeros()
        critic_backward(forward, 1.0, params, grads)
        assert_close_relative(grads_to_vector(params, grads), fd_gradient(params, scalar))


# ---- checkpoints ----


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    cfg = PolicyConfig(s=15, g=5, channels_out=4, hidden=64)
    params = init_params(cfg, rng)
    params.values["feat_mean"] = rng.normal(size=7)
    params.values["feat_count"][:] = 128.0
    path = tmp_path / "policy.bin"
    save_checkpoint(params, cfg, path)

    loaded, loaded_cfg = load_checkpoint(path)
    assert loaded_cfg == cfg
    for name in params.param_names() + params.buffer_names():
        np.testing.assert_array_equal(
            loaded[name], params[name].astype(np.float32).astype(np.float64)
        )

    # a second save of the loaded parameters is byte-identical
    again = tmp_path / "again.bin"
    save_checkpoint(loaded, loaded_cfg, again)
    assert again.read_bytes() == path.read_bytes()


def test_checkpoint_rejects_truncated_payload(tmp_path):
    cfg = PolicyConfig(s=15, g=5)
    params = PolicyParams.zeros(cfg)
    path = tmp_path / "policy.bin"
    save_checkpoint(params, cfg, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="floats"):
        load_checkpoint(path)


def test_parameter_vector_round_trip():
    _, params, _, _ = random_setup(41)
    vec = params.to_vector()
    clone = PolicyParams.zeros(SMALL)
    clone.from_vector(vec)
    np.testing.assert_array_equal(clone.to_vector(), vec)
    with pytest.raises(ValueError):
        clone.from_vector(vec[:-1])
