import numpy as np
import pytest

from recap import autodiff as ad
from recap.data import NUM_FRAMES

from oracles import (
    assert_fd_matches,
    central_difference,
    fd_close,
    recon_global_oracle,
    recon_joint_oracle,
    recon_local_oracle,
)
from util import random_feats, tiny_decoder, tiny_global_recon, tiny_joint_recon, tiny_local_recon


def rand_hidden(rng, n, dim):
    return [ad.constant(rng.normal(size=dim)) for _ in range(n)]


def arrays(recon):
    return {n: p.data for n, p in recon.parameters().items()}


# --- global variant -------------------------------------------------------------


def test_global_loss_nonnegative():
    rng = np.random.default_rng(0)
    recon = tiny_global_recon()
    trace = recon.reconstruct(rand_hidden(rng, 3, 4), random_feats(rng, d=4))
    assert trace.loss.item() >= 0.0


def test_global_loss_zero_on_injected_match():
    rng = np.random.default_rng(1)
    recon = tiny_global_recon()
    feats = random_feats(rng, d=4)
    trace = recon.reconstruct(rand_hidden(rng, 3, 4), feats)
    # the loss is exactly psi(mean valid frames, mean z); injecting z-states
    # whose mean equals the valid-frame mean therefore gives zero
    phi_v = feats.matrix[: feats.valid_count].mean(axis=0)
    injected = ad.sq_euclidean(
        ad.constant(phi_v), ad.mean_pool([ad.constant(phi_v)] * 3)
    )
    assert injected.item() == 0.0
    recomputed = ad.sq_euclidean(
        ad.constant(phi_v), ad.mean_pool([ad.constant(z.data) for z in trace.z_states])
    )
    assert abs(trace.loss.item() - recomputed.item()) <= 1e-12


def test_global_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    recon = tiny_global_recon(seed=2)
    hidden = rand_hidden(rng, 3, 4)
    feats = random_feats(rng, d=4, valid=10)
    trace = recon.reconstruct(hidden, feats)
    expected = recon_global_oracle(
        arrays(recon), [h.data for h in hidden], feats.matrix, feats.valid_count
    )
    assert abs(trace.loss.item() - expected) <= 1e-10


def test_global_rejects_empty_hidden():
    with pytest.raises(ValueError):
        tiny_global_recon().reconstruct([], random_feats(np.random.default_rng(0), d=4))


# --- local attention --------------------------------------------------------------


def test_recon_attend_uniform_when_weights_zero():
    recon = tiny_local_recon()
    recon.p["recon.local.attn.w_beta"].data[:] = 0.0
    rng = np.random.default_rng(3)
    beta, mu = recon.attend(rand_hidden(rng, 5, 4), ad.constant(np.zeros(4)))
    assert np.allclose(beta.data, np.full(5, 0.2), atol=1e-12)


def test_recon_attend_one_hot_returns_that_state():
    recon = tiny_local_recon()
    rng = np.random.default_rng(4)
    hidden = rand_hidden(rng, 4, 4)
    for h in hidden:
        h.data[0] = -1.0  # saturate every score low ...
    hidden[2] = ad.constant(np.array([9.0, 0.0, 0.0, 0.0]))  # ... except this one
    recon.p["recon.local.attn.w_hr"].data[:] = 0.0
    recon.p["recon.local.attn.w_hr"].data[0, 0] = 30.0
    recon.p["recon.local.attn.w_zr"].data[:] = 0.0
    recon.p["recon.local.attn.b_r"].data[:] = 0.0
    recon.p["recon.local.attn.w_beta"].data[:] = 0.0
    recon.p["recon.local.attn.w_beta"].data[0] = 30.0
    beta, mu = recon.attend(hidden, ad.constant(np.zeros(4)))
    assert beta.data[2] > 1 - 1e-9
    assert np.allclose(mu.data, hidden[2].data, atol=1e-6)


def test_recon_attend_matches_loop_oracle():
    recon = tiny_local_recon(seed=5)
    rng = np.random.default_rng(5)
    hidden = rand_hidden(rng, 3, 4)
    z_prev = ad.constant(rng.normal(size=4))
    beta, mu = recon.attend(hidden, z_prev)
    expected = np.zeros(4)
    for i, h in enumerate(hidden):
        expected += beta.data[i] * h.data
    assert np.all(np.abs(mu.data - expected) <= 1e-12)


# --- local variant -------------------------------------------------------------------


def test_local_matches_scalar_oracle():
    rng = np.random.default_rng(6)
    recon = tiny_local_recon(seed=6)
    hidden = rand_hidden(rng, 3, 4)
    feats = random_feats(rng, d=4)
    trace = recon.reconstruct(hidden, feats)
    expected = recon_local_oracle(arrays(recon), [h.data for h in hidden], feats.matrix)
    assert abs(trace.loss.item() - expected) <= 1e-10
    assert len(trace.z_states) == NUM_FRAMES
    for beta in trace.beta:
        assert abs(beta.data.sum() - 1.0) <= 1e-6


def test_local_loss_recomputed_from_trace():
    rng = np.random.default_rng(7)
    recon = tiny_local_recon(seed=7)
    feats = random_feats(rng, d=4)
    trace = recon.reconstruct(rand_hidden(rng, 3, 4), feats)
    expected = sum(
        ad.sq_euclidean(ad.constant(z.data), ad.constant(feats.matrix[j])).item()
        for j, z in enumerate(trace.z_states)
    ) / NUM_FRAMES
    assert abs(trace.loss.item() - expected) <= 1e-12


def test_local_invariant_to_hidden_permutation_under_uniform_attention():
    rng = np.random.default_rng(8)
    recon = tiny_local_recon(seed=8)
    recon.p["recon.local.attn.w_beta"].data[:] = 0.0
    hidden = rand_hidden(rng, 4, 4)
    feats = random_feats(rng, d=4)
    base = recon.reconstruct(hidden, feats).loss.item()
    permuted = recon.reconstruct([hidden[i] for i in (2, 0, 3, 1)], feats).loss.item()
    assert abs(base - permuted) <= 1e-9


def test_local_rejects_empty_hidden():
    with pytest.raises(ValueError):
        tiny_local_recon().reconstruct([], random_feats(np.random.default_rng(0), d=4))


# --- joint variant ---------------------------------------------------------------------


def test_joint_additivity_and_shared_pass():
    rng = np.random.default_rng(9)
    joint = tiny_joint_recon(seed=9)
    hidden = rand_hidden(rng, 3, 4)
    feats = random_feats(rng, d=4)
    trace = joint.reconstruct(hidden, feats)
    assert abs(trace.loss.item() - (trace.loss_global.item() + trace.loss_local.item())) <= 1e-12
    local_only = joint.local.reconstruct(hidden, feats, include_global=False)
    assert abs(trace.loss_local.item() - local_only.loss.item()) <= 1e-15
    for z_a, z_b in zip(trace.z_states, local_only.z_states):
        assert np.array_equal(z_a.data, z_b.data)


def test_joint_matches_scalar_oracle():
    rng = np.random.default_rng(10)
    joint = tiny_joint_recon(seed=10)
    hidden = rand_hidden(rng, 3, 4)
    feats = random_feats(rng, d=4, valid=12)
    trace = joint.reconstruct(hidden, feats)
    expected = recon_joint_oracle(
        arrays(joint), [h.data for h in hidden], feats.matrix, feats.valid_count
    )
    assert abs(trace.loss.item() - expected) <= 1e-10


# --- gradient flow ------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["global", "local", "joint"])
def test_gradients_flow_into_decoder_and_reconstructor(kind):
    dec = tiny_decoder(seed=20)
    rng = np.random.default_rng(20)
    feats = random_feats(rng, d=8)
    makers = {
        "global": lambda: tiny_global_recon(seed=21, hidden=8, rdim=8),
        "local": lambda: tiny_local_recon(seed=21, hidden=8, rdim=8),
        "joint": lambda: tiny_joint_recon(seed=21, hidden=8, rdim=8),
    }
    recon = makers[kind]()

    def loss_fn():
        _, trace = dec.teacher_forced(feats, [4, 5])
        return recon.reconstruct(trace.hidden, feats).loss.item()

    _, trace = dec.teacher_forced(feats, [4, 5])
    loss = recon.reconstruct(trace.hidden, feats).loss
    loss.backward()
    emb = dec.p["decoder.embedding"]
    assert emb.grad is not None and np.any(emb.grad != 0.0)
    for p in recon.parameters().values():
        assert p.grad is not None

    # one embedding coordinate: finite difference is nonzero and matches
    fd_rng = np.random.default_rng(1)
    assert_fd_matches(loss_fn, [emb], sample=6, rng=fd_rng)
    flat = emb.data.reshape(-1)
    idx = int(np.argmax(np.abs(emb.grad)))
    orig = flat[idx]
    flat[idx] = orig + 1e-4
    up = loss_fn()
    flat[idx] = orig - 1e-4
    down = loss_fn()
    flat[idx] = orig
    assert abs((up - down) / 2e-4) > 1e-8


@pytest.mark.parametrize("kind", ["global", "local", "joint"])
def test_reconstructor_parameter_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(30)
    makers = {
        "global": lambda: tiny_global_recon(seed=31),
        "local": lambda: tiny_local_recon(seed=31),
        "joint": lambda: tiny_joint_recon(seed=31),
    }
    recon = makers[kind]()
    hidden = rand_hidden(rng, 3, 4)
    feats = random_feats(rng, d=4)

    def loss_fn():
        return recon.reconstruct(hidden, feats).loss.item()

    recon.reconstruct(hidden, feats).loss.backward()
    assert_fd_matches(
        loss_fn, list(recon.parameters().values()), sample=10, rng=np.random.default_rng(2)
    )
