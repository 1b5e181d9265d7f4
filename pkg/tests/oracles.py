"""Independent reference computations used to check the library.

Everything here is plain numpy written directly from the defining formulas,
with no dependence on the package's autodiff path: central finite
differences for gradients, and step-by-step scalar re-implementations of
the decoder likelihood and the three reconstruction losses.
"""

from __future__ import annotations

import numpy as np

from recap.data import BOS_ID, EOS_ID, NUM_FRAMES

FD_EPS = 1e-4
FD_REL_TOL = 1e-4
FD_ABS_FLOOR = 1e-6


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def central_difference(loss_fn, array: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """d loss / d array by central differences, perturbing every coordinate."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def fd_close(fd: np.ndarray, analytic: np.ndarray) -> bool:
    scale = np.maximum(np.abs(fd), np.abs(analytic))
    tol = np.maximum(FD_ABS_FLOOR, FD_REL_TOL * scale)
    return bool(np.all(np.abs(fd - analytic) <= tol))


def assert_fd_matches(loss_fn, tensors, sample=None, rng=None):
    """Check every (or a sampled subset of) coordinate of each tensor.

    ``loss_fn`` must rebuild the loss from the tensors' current ``.data``;
    the analytic gradients are expected to already sit in ``.grad``.
    """
    for t in tensors:
        assert t.grad is not None, "analytic gradient missing"
        if sample is None or t.data.size <= sample:
            fd = central_difference(loss_fn, t.data)
            assert fd_close(fd, t.grad), f"finite differences disagree for {t!r}"
        else:
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            idx = rng.choice(flat.size, size=sample, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + FD_EPS
                up = loss_fn()
                flat[i] = orig - FD_EPS
                down = loss_fn()
                flat[i] = orig
                fd = (up - down) / (2.0 * FD_EPS)
                assert fd_close(np.asarray(fd), np.asarray(gflat[i])), (
                    f"finite differences disagree for {t!r} at flat index {i}"
                )


# --- decoder forward, written independently step by step -------------------


def decoder_logprob_oracle(params: dict[str, np.ndarray], frames: np.ndarray,
                           tokens: list[int], hidden_dim: int,
                           terminated: bool = True) -> float:
    """Total log-probability of a token sequence, recomputed with scalar numpy.

    ``terminated`` adds the trailing EOS prediction step, matching both the
    teacher-forced pass and an EOS-stopped rollout.
    """
    h = np.zeros(hidden_dim)
    mem = np.zeros(hidden_dim)
    total = 0.0
    w_a = params["decoder.attn.w_alpha"]
    w_vd = params["decoder.attn.w_vd"]
    w_hd = params["decoder.attn.w_hd"]
    b_d = params["decoder.attn.b_d"]
    targets = list(tokens) + ([EOS_ID] if terminated else [])
    fed = [BOS_ID] + targets[:-1]
    for prev, target in zip(fed, targets):
        scores = np.array(
            [w_a @ np.tanh(w_vd @ frames[j] + w_hd @ h + b_d) for j in range(len(frames))]
        )
        alpha = _softmax(scores)
        context = np.zeros(frames.shape[1])
        for j in range(len(frames)):
            context += alpha[j] * frames[j]
        inp = np.concatenate([params["decoder.embedding"][prev], context, h])
        pre = params["decoder.lstm.T"] @ inp + params["decoder.lstm.b"]
        gi = _sigmoid(pre[:hidden_dim])
        gf = _sigmoid(pre[hidden_dim : 2 * hidden_dim])
        go = _sigmoid(pre[2 * hidden_dim : 3 * hidden_dim])
        gg = np.tanh(pre[3 * hidden_dim :])
        mem = gf * mem + gi * gg
        h = go * np.tanh(mem)
        x = params["decoder.out.w"] @ h + params["decoder.out.b"]
        probs = _softmax(x)
        total += np.log(probs[target])
    return float(total)


def decoder_nll_oracle(params: dict[str, np.ndarray], frames: np.ndarray,
                       tokens: list[int], hidden_dim: int) -> float:
    """Teacher-forced negative log-likelihood."""
    return -decoder_logprob_oracle(params, frames, tokens, hidden_dim, terminated=True)


# --- reconstruction losses, recomputed independently ------------------------


def _psi(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    return float(np.dot(diff, diff) / diff.size)


def _lstm_oracle(transform, bias, inp, mem_prev, rdim):
    pre = transform @ inp + bias
    gi = _sigmoid(pre[:rdim])
    gf = _sigmoid(pre[rdim : 2 * rdim])
    go = _sigmoid(pre[2 * rdim : 3 * rdim])
    gg = np.tanh(pre[3 * rdim :])
    mem = gf * mem_prev + gi * gg
    return go * np.tanh(mem), mem


def recon_global_oracle(params, hidden: list[np.ndarray], frames: np.ndarray,
                        valid_count: int) -> float:
    rdim = frames.shape[1]
    phi_h = sum(hidden) / len(hidden)
    z = np.zeros(rdim)
    mem = np.zeros(rdim)
    zs = []
    for h_t in hidden:
        z, mem = _lstm_oracle(
            params["recon.global.T"], params["recon.global.b"],
            np.concatenate([h_t, z, phi_h]), mem, rdim,
        )
        zs.append(z)
    phi_v = frames[:valid_count].mean(axis=0)
    phi_z = sum(zs) / len(zs)
    return _psi(phi_v, phi_z)


def recon_local_zs_oracle(params, hidden: list[np.ndarray], rdim: int) -> list[np.ndarray]:
    z = np.zeros(rdim)
    mem = np.zeros(rdim)
    zs = []
    for _ in range(NUM_FRAMES):
        scores = np.array(
            [
                params["recon.local.attn.w_beta"]
                @ np.tanh(
                    params["recon.local.attn.w_hr"] @ h_i
                    + params["recon.local.attn.w_zr"] @ z
                    + params["recon.local.attn.b_r"]
                )
                for h_i in hidden
            ]
        )
        beta = _softmax(scores)
        mu = np.zeros(hidden[0].size)
        for i, h_i in enumerate(hidden):
            mu += beta[i] * h_i
        z, mem = _lstm_oracle(
            params["recon.local.T"], params["recon.local.b"],
            np.concatenate([mu, z]), mem, rdim,
        )
        zs.append(z)
    return zs


def recon_local_oracle(params, hidden: list[np.ndarray], frames: np.ndarray) -> float:
    zs = recon_local_zs_oracle(params, hidden, frames.shape[1])
    return sum(_psi(z_j, frames[j]) for j, z_j in enumerate(zs)) / NUM_FRAMES


def recon_joint_oracle(params, hidden: list[np.ndarray], frames: np.ndarray,
                       valid_count: int) -> float:
    zs = recon_local_zs_oracle(params, hidden, frames.shape[1])
    local = sum(_psi(z_j, frames[j]) for j, z_j in enumerate(zs)) / NUM_FRAMES
    glob = _psi(sum(zs) / len(zs), frames[:valid_count].mean(axis=0))
    return glob + local
