"""Small factories shared across test modules."""

from __future__ import annotations

import numpy as np

from recap.data import NUM_FRAMES, SampledFeatures
from recap.decoder import AttentionDecoder, DecoderConfig
from recap.reconstructor import GlobalReconstructor, JointReconstructor, LocalReconstructor


def tiny_decoder(
    seed: int = 0,
    vocab_size: int = 6,
    feat_dim: int = 8,
    hidden: int = 8,
    embed: int = 8,
    max_steps: int = 31,
    **kwargs,
) -> AttentionDecoder:
    cfg = DecoderConfig(
        vocab_size=vocab_size,
        feat_dim=feat_dim,
        embed_dim=embed,
        hidden_dim=hidden,
        attn_dim=hidden,
        max_steps=max_steps,
        **kwargs,
    )
    return AttentionDecoder(cfg, np.random.default_rng(seed))


def random_feats(rng: np.random.Generator, d: int = 8, valid: int = NUM_FRAMES) -> SampledFeatures:
    mat = np.zeros((NUM_FRAMES, d))
    mat[:valid] = rng.normal(size=(valid, d))
    return SampledFeatures(matrix=mat, valid_count=valid)


def tiny_global_recon(seed: int = 1, hidden: int = 4, rdim: int = 4) -> GlobalReconstructor:
    return GlobalReconstructor(hidden, rdim, np.random.default_rng(seed))


def tiny_local_recon(seed: int = 1, hidden: int = 4, rdim: int = 4) -> LocalReconstructor:
    return LocalReconstructor(hidden, rdim, np.random.default_rng(seed))


def tiny_joint_recon(seed: int = 1, hidden: int = 4, rdim: int = 4) -> JointReconstructor:
    return JointReconstructor(hidden, rdim, np.random.default_rng(seed))
