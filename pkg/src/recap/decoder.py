"""LSTM decoder with temporal attention over sampled frame features.

One decoding step attends over all 28 frame rows with scores
``e_j = w_alpha . tanh(w_vd v_j + w_hd h_prev + b_d)``, mixes the frames by
the softmaxed weights into a context vector, and feeds the concatenation
(word embedding, context, previous hidden) through a single 4-gate LSTM
transform. Zero-padded frames take part in the attention by default; an
optional mask excludes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import BOS_ID, EOS_ID, PAD_ID, UNK_ID, NUM_FRAMES, SampledFeatures

MAX_DECODE_STEPS = 31  # 30 caption tokens plus the EOS step


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    feat_dim: int
    embed_dim: int = 468
    hidden_dim: int = 512
    attn_dim: int | None = None  # defaults to hidden_dim
    max_steps: int = MAX_DECODE_STEPS
    mask_padded_frames: bool = False
    mask_reserved_tokens: bool = False

    @property
    def score_dim(self) -> int:
        return self.hidden_dim if self.attn_dim is None else self.attn_dim


@dataclass
class LSTMState:
    h: Tensor
    mem: Tensor


@dataclass
class DecoderTrace:
    """Record of one decoding pass (teacher forced, greedy, or sampled)."""

    tokens: list[int] = field(default_factory=list)
    hidden: list[Tensor] = field(default_factory=list)
    attention: list[Tensor] = field(default_factory=list)
    logits: list[Tensor] = field(default_factory=list)
    step_log_probs: list[Tensor] = field(default_factory=list)
    terminated: bool = False  # True when the pass ended by emitting EOS

    def caption_tokens(self) -> list[int]:
        if self.terminated and self.tokens and self.tokens[-1] == EOS_ID:
            return self.tokens[:-1]
        return list(self.tokens)


class _VideoContext:
    """Per-video constants reused across decode steps."""

    def __init__(self, decoder: "AttentionDecoder", feats: SampledFeatures):
        self.frames = ad.constant(feats.matrix)  # (28, d)
        self.vproj = ad.matmul(decoder.p["decoder.attn.w_vd"], ad.constant(feats.matrix.T))
        self.score_mask: Tensor | None = None
        if decoder.config.mask_padded_frames and feats.valid_count < NUM_FRAMES:
            mask = np.zeros(NUM_FRAMES)
            mask[feats.valid_count :] = -1e9
            self.score_mask = ad.constant(mask)


class AttentionDecoder:
    def __init__(self, config: DecoderConfig, rng: np.random.Generator):
        self.config = config
        v, d = config.vocab_size, config.feat_dim
        e, h, k = config.embed_dim, config.hidden_dim, config.score_dim
        lstm_in = e + d + h

        def p(name: str, shape, fan_in: int) -> Parameter:
            return Parameter(name, ad.uniform_init(shape, fan_in, rng))

        self.p: dict[str, Parameter] = {}
        for par in (
            p("decoder.embedding", (v, e), e),
            p("decoder.attn.w_alpha", (k,), k),
            p("decoder.attn.w_vd", (k, d), d),
            p("decoder.attn.w_hd", (k, h), h),
            p("decoder.attn.b_d", (k,), k),
            p("decoder.lstm.T", (4 * h, lstm_in), lstm_in),
            p("decoder.lstm.b", (4 * h,), lstm_in),
            p("decoder.out.w", (v, h), h),
            p("decoder.out.b", (v,), h),
        ):
            self.p[par.name] = par
        self._token_mask: np.ndarray | None = None
        if config.mask_reserved_tokens:
            mask = np.zeros(v)
            for tid in (PAD_ID, BOS_ID, UNK_ID):
                mask[tid] = -1e9
            self._token_mask = mask

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.p)

    def init_state(self) -> LSTMState:
        h = self.config.hidden_dim
        return LSTMState(h=ad.constant(np.zeros(h)), mem=ad.constant(np.zeros(h)))

    # --- single step ------------------------------------------------------

    def _attend(self, ctx: _VideoContext, h_prev: Tensor) -> tuple[Tensor, Tensor]:
        hproj = ad.add(
            ad.matmul(self.p["decoder.attn.w_hd"], h_prev), self.p["decoder.attn.b_d"]
        )
        u = ad.tanh(ad.add_colvec(ctx.vproj, hproj))
        e = ad.matmul(self.p["decoder.attn.w_alpha"], u)
        if ctx.score_mask is not None:
            e = ad.add(e, ctx.score_mask)
        alpha = ad.softmax(e)
        context = ad.matmul(alpha, ctx.frames)
        return alpha, context

    def attend(self, feats: SampledFeatures, h_prev: Tensor) -> tuple[Tensor, Tensor]:
        """Attention weights over the 28 frames and the mixed context vector."""
        return self._attend(_VideoContext(self, feats), h_prev)

    def _step(
        self, prev_token: int, state: LSTMState, ctx: _VideoContext
    ) -> tuple[Tensor, Tensor, LSTMState]:
        hdim = self.config.hidden_dim
        emb = ad.row(self.p["decoder.embedding"], prev_token)
        alpha, context = self._attend(ctx, state.h)
        pre = ad.add(
            ad.matmul(self.p["decoder.lstm.T"], ad.concat([emb, context, state.h])),
            self.p["decoder.lstm.b"],
        )
        gi = ad.sigmoid(ad.narrow(pre, 0, hdim))
        gf = ad.sigmoid(ad.narrow(pre, hdim, hdim))
        go = ad.sigmoid(ad.narrow(pre, 2 * hdim, hdim))
        gg = ad.tanh(ad.narrow(pre, 3 * hdim, hdim))
        mem = ad.add(ad.hadamard(gf, state.mem), ad.hadamard(gi, gg))
        h = ad.hadamard(go, ad.tanh(mem))
        x = ad.add(ad.matmul(self.p["decoder.out.w"], h), self.p["decoder.out.b"])
        if self._token_mask is not None:
            x = ad.add(x, ad.constant(self._token_mask))
        return x, alpha, LSTMState(h=h, mem=mem)

    def decode_step(
        self, prev_token: int, state: LSTMState, feats: SampledFeatures
    ) -> tuple[Tensor, LSTMState, Tensor]:
        """One step: returns (token probabilities, new state, new hidden)."""
        if not (0 <= prev_token < self.config.vocab_size):
            raise ValueError(
                f"invalid token id {prev_token} for vocab of {self.config.vocab_size}"
            )
        x, _, new_state = self._step(prev_token, state, _VideoContext(self, feats))
        return ad.softmax(x), new_state, new_state.h

    # --- full passes --------------------------------------------------------

    def teacher_forced(
        self, feats: SampledFeatures, gt_tokens: list[int]
    ) -> tuple[Tensor, DecoderTrace]:
        """Negative log-likelihood of the ground-truth caption plus its trace.

        Feeds BOS then the ground-truth tokens; the final step predicts EOS,
        so the trace holds len(gt)+1 steps.
        """
        if not gt_tokens:
            raise ValueError("teacher_forced: empty ground-truth caption")
        for t in gt_tokens:
            if not (0 <= t < self.config.vocab_size):
                raise ValueError(f"invalid token id {t}")
        ctx = _VideoContext(self, feats)
        state = self.init_state()
        trace = DecoderTrace(terminated=True)
        for prev, target in zip([BOS_ID] + gt_tokens, gt_tokens + [EOS_ID]):
            x, alpha, state = self._step(prev, state, ctx)
            lp = ad.pick(ad.log_softmax(x), target)
            trace.tokens.append(target)
            trace.hidden.append(state.h)
            trace.attention.append(alpha)
            trace.logits.append(x)
            trace.step_log_probs.append(lp)
        nll = ad.scale(ad.add_n(trace.step_log_probs), -1.0)
        return nll, trace

    def _rollout(
        self, feats: SampledFeatures, select: Callable[[np.ndarray], int]
    ) -> DecoderTrace:
        ctx = _VideoContext(self, feats)
        state = self.init_state()
        trace = DecoderTrace()
        prev = BOS_ID
        for _ in range(self.config.max_steps):
            x, alpha, state = self._step(prev, state, ctx)
            logp = ad.log_softmax(x)
            tok = select(logp.data)
            trace.tokens.append(tok)
            trace.hidden.append(state.h)
            trace.attention.append(alpha)
            trace.logits.append(x)
            trace.step_log_probs.append(ad.pick(logp, tok))
            if tok == EOS_ID:
                trace.terminated = True
                break
            prev = tok
        return trace

    def greedy_trace(self, feats: SampledFeatures) -> DecoderTrace:
        with ad.no_grad():
            return self._rollout(feats, lambda lp: int(np.argmax(lp)))

    def greedy_decode(self, feats: SampledFeatures) -> list[int]:
        """Argmax rollout; stops at EOS or after 31 steps."""
        return self.greedy_trace(feats).caption_tokens()

    def sample_trace(
        self, feats: SampledFeatures, rng: np.random.Generator | int
    ) -> DecoderTrace:
        """Multinomial rollout with a differentiable per-step log-prob record."""
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)

        def select(logp: np.ndarray) -> int:
            probs = np.exp(logp)
            probs /= probs.sum()
            return int(rng.choice(len(probs), p=probs))

        return self._rollout(feats, select)

    def sample_decode(
        self, feats: SampledFeatures, rng: np.random.Generator | int
    ) -> tuple[list[int], list[Tensor]]:
        trace = self.sample_trace(feats, rng)
        return trace.caption_tokens(), list(trace.step_log_probs)

    def forced_log_prob(
        self, feats: SampledFeatures, tokens: list[int], terminated: bool
    ) -> Tensor:
        """Total log-probability of an explicit token sequence.

        When ``terminated`` the sequence's EOS step is included, matching the
        accounting of a rollout that stopped on EOS.
        """
        ctx = _VideoContext(self, feats)
        state = self.init_state()
        steps = list(tokens) + ([EOS_ID] if terminated else [])
        lps = []
        prev = BOS_ID
        for tok in steps:
            x, _, state = self._step(prev, state, ctx)
            lps.append(ad.pick(ad.log_softmax(x), tok))
            prev = tok
        return ad.add_n(lps)

    def beam_search(self, feats: SampledFeatures, beam: int = 5) -> list[int]:
        """Length-wise beam over summed log-probs.

        Candidates that emit EOS retire to a finished pool; the best finished
        (or step-capped) hypothesis wins, ties broken by earlier EOS then
        lexicographic token ids.
        """
        if beam < 1:
            raise ValueError(f"beam width must be >= 1, got {beam}")
        with ad.no_grad():
            ctx = _VideoContext(self, feats)
            live: list[tuple[tuple[int, ...], float, LSTMState]] = [
                ((), 0.0, self.init_state())
            ]
            finished: list[tuple[float, int, int, tuple[int, ...]]] = []
            for _ in range(self.config.max_steps):
                candidates = []
                for tokens, logp, state in live:
                    prev = tokens[-1] if tokens else BOS_ID
                    x, _, new_state = self._step(prev, state, ctx)
                    step_lp = ad.log_softmax(x).data
                    for tok in range(self.config.vocab_size):
                        candidates.append(
                            (logp + step_lp[tok], tokens + (tok,), new_state)
                        )
                candidates.sort(key=lambda c: (-c[0], c[1]))
                live = []
                for logp, tokens, state in candidates[:beam]:
                    if tokens[-1] == EOS_ID:
                        finished.append((-logp, len(tokens) - 1, 0, tokens[:-1]))
                    else:
                        live.append((tokens, logp, state))
                if not live:
                    break
            for tokens, logp, _state in live:
                finished.append((-logp, len(tokens), 1, tokens))
            finished.sort()
            return list(finished[0][3])
