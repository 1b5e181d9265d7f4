"""Reconstruct video features from decoder hidden states.

Three variants share one LSTM cell pattern (single affine transform over the
concatenated inputs, gates i/f/o/g): the global variant runs one step per
decoder hidden state and matches mean-pooled features, the local variant
runs 28 steps with attention over the hidden states and matches each frame
row, and the joint variant adds the global term on top of the local pass.

Decoder hidden states are not detached, so reconstruction gradients also
fine-tune the decoder. The mean-pooled feature target averages only the
valid (non-padded) rows; the local per-frame sum covers all 28 rows unless
``valid_rows_only`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import NUM_FRAMES, SampledFeatures


@dataclass
class ReconTrace:
    z_states: list[Tensor]
    loss: Tensor
    beta: list[Tensor] | None = None
    loss_global: Tensor | None = None
    loss_local: Tensor | None = None


def _valid_mean(feats: SampledFeatures) -> Tensor:
    return ad.constant(feats.matrix[: feats.valid_count].mean(axis=0))


def _lstm_step(
    transform: Parameter, bias: Parameter, inp: Tensor, z_prev: Tensor, mem_prev: Tensor
) -> tuple[Tensor, Tensor]:
    rdim = z_prev.shape[0]
    pre = ad.add(ad.matmul(transform, inp), bias)
    gi = ad.sigmoid(ad.narrow(pre, 0, rdim))
    gf = ad.sigmoid(ad.narrow(pre, rdim, rdim))
    go = ad.sigmoid(ad.narrow(pre, 2 * rdim, rdim))
    gg = ad.tanh(ad.narrow(pre, 3 * rdim, rdim))
    mem = ad.add(ad.hadamard(gf, mem_prev), ad.hadamard(gi, gg))
    z = ad.hadamard(go, ad.tanh(mem))
    return z, mem


class GlobalReconstructor:
    """Recover the mean-pooled video feature from the hidden-state sequence."""

    def __init__(self, decoder_hidden: int, recon_dim: int, rng: np.random.Generator):
        self.decoder_hidden = decoder_hidden
        self.recon_dim = recon_dim
        lstm_in = decoder_hidden + recon_dim + decoder_hidden
        self.p = {
            "recon.global.T": Parameter(
                "recon.global.T", ad.uniform_init((4 * recon_dim, lstm_in), lstm_in, rng)
            ),
            "recon.global.b": Parameter(
                "recon.global.b", ad.uniform_init((4 * recon_dim,), lstm_in, rng)
            ),
        }

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.p)

    def reconstruct(self, hidden: Sequence[Tensor], feats: SampledFeatures) -> ReconTrace:
        if not hidden:
            raise ValueError("recon_global: empty hidden-state sequence")
        phi_h = ad.mean_pool(list(hidden))
        z = ad.constant(np.zeros(self.recon_dim))
        mem = ad.constant(np.zeros(self.recon_dim))
        zs: list[Tensor] = []
        for h_t in hidden:
            z, mem = _lstm_step(
                self.p["recon.global.T"],
                self.p["recon.global.b"],
                ad.concat([h_t, z, phi_h]),
                z,
                mem,
            )
            zs.append(z)
        loss = ad.sq_euclidean(_valid_mean(feats), ad.mean_pool(zs))
        return ReconTrace(z_states=zs, loss=loss)


class LocalReconstructor:
    """Recover each frame row via attention over the decoder hidden states."""

    def __init__(
        self,
        decoder_hidden: int,
        recon_dim: int,
        rng: np.random.Generator,
        attn_dim: int | None = None,
        valid_rows_only: bool = False,
    ):
        self.decoder_hidden = decoder_hidden
        self.recon_dim = recon_dim
        self.valid_rows_only = valid_rows_only
        k = decoder_hidden if attn_dim is None else attn_dim
        self.attn_dim = k
        lstm_in = decoder_hidden + recon_dim
        names_shapes_fans = [
            ("recon.local.attn.w_beta", (k,), k),
            ("recon.local.attn.w_hr", (k, decoder_hidden), decoder_hidden),
            ("recon.local.attn.w_zr", (k, recon_dim), recon_dim),
            ("recon.local.attn.b_r", (k,), k),
            ("recon.local.T", (4 * recon_dim, lstm_in), lstm_in),
            ("recon.local.b", (4 * recon_dim,), lstm_in),
        ]
        self.p = {
            name: Parameter(name, ad.uniform_init(shape, fan, rng))
            for name, shape, fan in names_shapes_fans
        }

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.p)

    def attend(
        self, hidden: Sequence[Tensor], z_prev: Tensor
    ) -> tuple[Tensor, Tensor]:
        """Weights over the n hidden states and their convex mix."""
        if not hidden:
            raise ValueError("recon_attend: empty hidden-state sequence")
        h_rows = ad.stack_rows(list(hidden))
        proj = ad.matmul(self.p["recon.local.attn.w_hr"], ad.transpose2d(h_rows))
        return self._attend(h_rows, proj, z_prev)

    def _attend(
        self, h_rows: Tensor, proj: Tensor, z_prev: Tensor
    ) -> tuple[Tensor, Tensor]:
        zproj = ad.add(
            ad.matmul(self.p["recon.local.attn.w_zr"], z_prev),
            self.p["recon.local.attn.b_r"],
        )
        u = ad.tanh(ad.add_colvec(proj, zproj))
        beta = ad.softmax(ad.matmul(self.p["recon.local.attn.w_beta"], u))
        mu = ad.matmul(beta, h_rows)
        return beta, mu

    def reconstruct(
        self,
        hidden: Sequence[Tensor],
        feats: SampledFeatures,
        include_global: bool = False,
    ) -> ReconTrace:
        if not hidden:
            raise ValueError("recon_local: empty hidden-state sequence")
        h_rows = ad.stack_rows(list(hidden))
        proj = ad.matmul(self.p["recon.local.attn.w_hr"], ad.transpose2d(h_rows))
        z = ad.constant(np.zeros(self.recon_dim))
        mem = ad.constant(np.zeros(self.recon_dim))
        zs: list[Tensor] = []
        betas: list[Tensor] = []
        for _ in range(NUM_FRAMES):
            beta, mu = self._attend(h_rows, proj, z)
            z, mem = _lstm_step(
                self.p["recon.local.T"],
                self.p["recon.local.b"],
                ad.concat([mu, z]),
                z,
                mem,
            )
            zs.append(z)
            betas.append(beta)
        rows = range(feats.valid_count if self.valid_rows_only else NUM_FRAMES)
        terms = [ad.sq_euclidean(zs[j], ad.constant(feats.matrix[j])) for j in rows]
        loss_local = ad.scale(ad.add_n(terms), 1.0 / len(terms))
        if not include_global:
            return ReconTrace(z_states=zs, beta=betas, loss=loss_local, loss_local=loss_local)
        loss_global = ad.sq_euclidean(ad.mean_pool(zs), _valid_mean(feats))
        total = ad.add(loss_global, loss_local)
        return ReconTrace(
            z_states=zs,
            beta=betas,
            loss=total,
            loss_global=loss_global,
            loss_local=loss_local,
        )


class JointReconstructor:
    """Local pass plus the global mean-match term, sharing one LSTM pass."""

    def __init__(
        self,
        decoder_hidden: int,
        recon_dim: int,
        rng: np.random.Generator,
        attn_dim: int | None = None,
        valid_rows_only: bool = False,
    ):
        self.local = LocalReconstructor(
            decoder_hidden, recon_dim, rng, attn_dim=attn_dim, valid_rows_only=valid_rows_only
        )

    def parameters(self) -> dict[str, Parameter]:
        return self.local.parameters()

    def reconstruct(self, hidden: Sequence[Tensor], feats: SampledFeatures) -> ReconTrace:
        return self.local.reconstruct(hidden, feats, include_global=True)


def build_reconstructor(
    kind: str,
    decoder_hidden: int,
    recon_dim: int,
    rng: np.random.Generator,
    valid_rows_only: bool = False,
):
    if kind == "none":
        return None
    if kind == "global":
        return GlobalReconstructor(decoder_hidden, recon_dim, rng)
    if kind == "local":
        return LocalReconstructor(
            decoder_hidden, recon_dim, rng, valid_rows_only=valid_rows_only
        )
    if kind == "joint":
        return JointReconstructor(
            decoder_hidden, recon_dim, rng, valid_rows_only=valid_rows_only
        )
    raise ValueError(f"unknown reconstructor kind: {kind!r}")
