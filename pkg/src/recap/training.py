"""Cross-entropy and self-critical training with optional reconstruction loss.

Training runs in stages. Stage 1 always trains the decoder alone with
cross-entropy (AdaDelta). Depending on the configured terminal stage, a
second stage attaches the reconstructor and minimizes caption loss plus
``lam`` times the reconstruction loss, or switches the caption term to the
self-critical policy-gradient surrogate (Adam, lr 1e-5), or both. Every
stage stops early when validation CIDEr fails to improve for ``patience``
consecutive epochs and hands its best-CIDEr parameters to the next stage.

Checkpoints are binary: magic ``RCNC``, version u32, vocabulary block,
config block, epoch, best validation CIDEr, then length-prefixed
(name, shape, float64 values) parameter records. Round-trips are bitwise.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import CaptionRecord, Corpus, Splits, Vocabulary
from .decoder import AttentionDecoder, DecoderConfig
from .metrics import (
    MetricReport,
    build_docfreq,
    cider as cider_metric,
    compute_report,
    sentence_cider,
)
from .reconstructor import build_reconstructor

CHECKPOINT_MAGIC = b"RCNC"
CHECKPOINT_VERSION = 1

DEFAULT_LAMBDA = {"none": 0.0, "global": 0.2, "local": 0.1, "joint": 0.1}


class TrainError(ValueError):
    """Configuration or corpus problem detected before or during training."""


class NumericsError(RuntimeError):
    """Loss became non-finite."""

    def __init__(self, stage: str, epoch: int, value: float):
        super().__init__(f"non-finite loss {value} in stage {stage!r}, epoch {epoch}")
        self.stage = stage
        self.epoch = epoch


class CheckpointError(ValueError):
    """Checkpoint bytes are corrupt or do not match the model being restored."""


@dataclass
class TrainConfig:
    stage: str = "xe"  # xe | joint | rl | rl-joint
    reconstructor: str = "none"  # none | global | local | joint
    lam: float | None = None  # None -> 0.2 global, 0.1 local/joint, 0.0 none
    optimizer: str = "auto"  # auto | adadelta | adam
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    adam_lr: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    patience: int = 20
    max_epochs: int = 200
    seed: int = 0
    hidden_dim: int = 512
    embed_dim: int = 468
    attn_dim: int | None = None
    feat_dim: int | None = None  # filled in from the corpus
    mask_padded_frames: bool = False
    mask_reserved_tokens: bool = False
    local_valid_rows_only: bool = False
    cider_variant: str = "plain"

    def __post_init__(self):
        if self.stage not in ("xe", "joint", "rl", "rl-joint"):
            raise TrainError(f"unknown stage {self.stage!r}")
        if self.reconstructor not in DEFAULT_LAMBDA:
            raise TrainError(f"unknown reconstructor {self.reconstructor!r}")
        if self.lam is not None and self.lam < 0:
            raise TrainError(f"lambda must be >= 0, got {self.lam}")

    def resolved_lambda(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return DEFAULT_LAMBDA[self.reconstructor]

    def stage_sequence(self) -> list[str]:
        return {"xe": ["xe"], "joint": ["xe", "joint"], "rl": ["xe", "rl"],
                "rl-joint": ["xe", "rl-joint"]}[self.stage]


@dataclass
class RewardStats:
    sampled: float
    baseline: float

    @property
    def advantage(self) -> float:
        return self.sampled - self.baseline


@dataclass
class EpochEntry:
    stage: str
    epoch: int
    ed_loss: float
    recon_loss: float
    total_loss: float
    val_cider: float


EPOCH_CSV_HEADER = "epoch,xe_loss,recon_loss,total_loss,val_cider"


def epoch_csv_line(e: EpochEntry) -> str:
    return f"{e.epoch},{e.ed_loss!r},{e.recon_loss!r},{e.total_loss!r},{e.val_cider!r}"


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        """Record one epoch's metric; returns True when training should stop."""
        if value > self.best:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience

    @property
    def improved(self) -> bool:
        return self.stale == 0


class AdaDelta:
    def __init__(self, params: dict[str, Tensor], rho: float = 0.95, eps: float = 1e-6):
        self.params = params
        self.rho = rho
        self.eps = eps
        self.acc_grad = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.acc_delta = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.acc_grad[name] = self.rho * self.acc_grad[name] + (1 - self.rho) * g * g
            delta = (
                -np.sqrt(self.acc_delta[name] + self.eps)
                / np.sqrt(self.acc_grad[name] + self.eps)
                * g
            )
            self.acc_delta[name] = (
                self.rho * self.acc_delta[name] + (1 - self.rho) * delta * delta
            )
            p.data += delta


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- checkpoint format ------------------------------------------------------


@dataclass
class Checkpoint:
    vocab: Vocabulary
    config: TrainConfig
    epoch: int
    best_val_cider: float
    params: dict[str, np.ndarray]


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    words = ckpt.vocab.words()
    out += struct.pack("<II", len(words), ckpt.vocab.min_count)
    for w in words:
        out += _pack_str(w)
    cfg_json = json.dumps(dataclasses.asdict(ckpt.config), sort_keys=True)
    out += _pack_str(cfg_json)
    out += struct.pack("<Id", ckpt.epoch, ckpt.best_val_cider)
    out += struct.pack("<I", len(ckpt.params))
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        out += _pack_str(name)
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, expected {CHECKPOINT_MAGIC!r}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    n_words = r.u32()
    min_count = r.u32()
    words = [r.string() for _ in range(n_words)]
    try:
        cfg = TrainConfig(**json.loads(r.string()))
    except (json.JSONDecodeError, TypeError, TrainError) as e:
        raise CheckpointError(f"{path}: bad config block: {e}")
    epoch = r.u32()
    best = r.f64()
    n_params = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        name = r.string()
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()
        params[name] = data
    return Checkpoint(
        vocab=Vocabulary(words, min_count=min_count),
        config=cfg,
        epoch=epoch,
        best_val_cider=best,
        params=params,
    )


def restore_params(model_params: dict[str, Tensor], saved: dict[str, np.ndarray]) -> None:
    if set(model_params) != set(saved):
        missing = set(model_params) ^ set(saved)
        raise CheckpointError(f"parameter name mismatch: {sorted(missing)}")
    for name, p in model_params.items():
        if p.data.shape != saved[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: model {p.data.shape}, saved {saved[name].shape}"
            )
        p.data = saved[name].copy()


def build_models(config: TrainConfig, vocab: Vocabulary):
    """Seeded decoder plus optional reconstructor.

    The decoder and reconstructor draw from independent seed streams so the
    decoder's initialization does not depend on whether a reconstructor
    exists (lambda = 0 runs must match reconstructor-free runs exactly).
    """
    if config.feat_dim is None:
        raise TrainError("feat_dim is unset; fill it from the corpus")
    dec_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    rec_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    decoder = AttentionDecoder(
        DecoderConfig(
            vocab_size=len(vocab),
            feat_dim=config.feat_dim,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            attn_dim=config.attn_dim,
            mask_padded_frames=config.mask_padded_frames,
            mask_reserved_tokens=config.mask_reserved_tokens,
        ),
        dec_rng,
    )
    recon = build_reconstructor(
        config.reconstructor,
        decoder_hidden=config.hidden_dim,
        recon_dim=config.feat_dim,
        rng=rec_rng,
        valid_rows_only=config.local_valid_rows_only,
    )
    return decoder, recon


def models_from_checkpoint(ckpt: Checkpoint):
    decoder, recon = build_models(ckpt.config, ckpt.vocab)
    params = decoder.parameters()
    if recon is not None:
        params.update(recon.parameters())
    restore_params(params, ckpt.params)
    return decoder, recon


# --- trainer ----------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    entries: list[EpochEntry]
    best_val_cider: float
    final_params: dict[str, np.ndarray]


ProgressFn = Callable[[EpochEntry], None]


class Trainer:
    def __init__(self, config: TrainConfig, corpus: Corpus, splits: Splits):
        if not splits.train:
            raise TrainError("empty training split")
        missing = [v for v in splits.train if v not in corpus.features]
        if missing:
            raise TrainError(f"training split ids without features: {missing[:5]}")
        if len(corpus.vocab) <= 4:
            raise TrainError("vocabulary holds no content words")
        if config.feat_dim is None:
            config = dataclasses.replace(config, feat_dim=corpus.feat_dim)
        self.config = config
        self.corpus = corpus
        self.splits = splits
        self.decoder, self.recon = build_models(config, corpus.vocab)
        self.lam = config.resolved_lambda()
        self._order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
        self._sample_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
        self.train_pairs = [
            rec
            for vid in splits.train
            for rec in corpus.captions.get(vid, [])
            if rec.tokens
        ]
        if not self.train_pairs:
            raise TrainError("no usable training captions")
        self.train_df = build_docfreq(
            [[rec.tokens for rec in corpus.captions.get(vid, [])] for vid in splits.train
             if corpus.captions.get(vid)]
        )
        self.val_refs = [
            [rec.tokens for rec in corpus.captions.get(vid, [])]
            for vid in splits.val
            if corpus.captions.get(vid)
        ]
        self.val_ids = [vid for vid in splits.val if corpus.captions.get(vid)]
        self.val_df = build_docfreq(self.val_refs) if self.val_refs else None
        self.epoch_counter = 0
        self.last_epoch_params: dict[str, np.ndarray] = self.snapshot_params()

    # --- parameter plumbing -------------------------------------------------

    def all_params(self) -> dict[str, Tensor]:
        params = self.decoder.parameters()
        if self.recon is not None:
            params.update(self.recon.parameters())
        return params

    def snapshot_params(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.all_params().items()}

    def load_params(self, saved: dict[str, np.ndarray]) -> None:
        restore_params(self.all_params(), saved)

    def zero_grads(self) -> None:
        for p in self.all_params().values():
            p.grad = None

    def _make_optimizer(self, stage_kind: str):
        choice = self.config.optimizer
        if choice == "auto":
            choice = "adadelta" if stage_kind in ("xe", "joint") else "adam"
        if choice == "adadelta":
            return AdaDelta(
                self.all_params(), rho=self.config.adadelta_rho, eps=self.config.adadelta_eps
            )
        if choice == "adam":
            return Adam(
                self.all_params(),
                lr=self.config.adam_lr,
                beta1=self.config.adam_beta1,
                beta2=self.config.adam_beta2,
                eps=self.config.adam_eps,
            )
        raise TrainError(f"unknown optimizer {choice!r}")

    # --- single steps --------------------------------------------------------

    def _recon_term(self, hidden, feats) -> Tensor:
        trace = self.recon.reconstruct(hidden, feats)
        return trace.loss

    def _build_losses(
        self, batch: Sequence[CaptionRecord], ed_mode: str, use_recon: bool
    ) -> tuple[Tensor, float, float, list[RewardStats]]:
        """Forward pass over a batch: total loss tensor plus logged components."""
        ed_terms: list[Tensor] = []
        recon_terms: list[Tensor] = []
        stats: list[RewardStats] = []
        for rec in batch:
            feats = self.corpus.features[rec.video_id]
            if ed_mode == "xe":
                nll, trace = self.decoder.teacher_forced(feats, rec.tokens)
                ed_terms.append(nll)
                hidden = trace.hidden
            else:
                sample = self.decoder.sample_trace(feats, self._sample_rng)
                greedy = self.decoder.greedy_trace(feats)
                refs = [r.tokens for r in self.corpus.captions[rec.video_id]]
                r_s = sentence_cider(
                    sample.caption_tokens(), refs, self.train_df, self.config.cider_variant
                )
                r_g = sentence_cider(
                    greedy.caption_tokens(), refs, self.train_df, self.config.cider_variant
                )
                stats.append(RewardStats(sampled=r_s, baseline=r_g))
                total_lp = ad.add_n(sample.step_log_probs)
                ed_terms.append(ad.scale(total_lp, -(r_s - r_g)))
                hidden = sample.hidden
            if use_recon and self.lam > 0:
                recon_terms.append(self._recon_term(hidden, feats))
        ed = ad.scale(ad.add_n(ed_terms), 1.0 / len(ed_terms))
        if recon_terms:
            recon = ad.scale(ad.add_n(recon_terms), 1.0 / len(recon_terms))
            total = ad.add(ed, ad.scale(recon, self.lam))
            return total, ed.item(), recon.item(), stats
        return ed, ed.item(), 0.0, stats

    def _run_step(
        self,
        batch: Sequence[CaptionRecord],
        ed_mode: str,
        use_recon: bool,
        optimizer=None,
        update: bool = True,
    ):
        if not batch:
            raise TrainError("empty batch")
        self.zero_grads()
        total, ed_val, recon_val, stats = self._build_losses(batch, ed_mode, use_recon)
        total.backward()
        if update:
            if optimizer is None:
                optimizer = self._make_optimizer("xe" if ed_mode == "xe" else "rl")
            optimizer.step()
        return total.item(), ed_val, recon_val, stats

    def xe_step(self, batch: Sequence[CaptionRecord], optimizer=None, update: bool = True) -> float:
        """Mean per-sentence NLL; gradients populated, optional optimizer update."""
        total, _, _, _ = self._run_step(batch, "xe", use_recon=False,
                                        optimizer=optimizer, update=update)
        return total

    def scst_step(
        self, batch: Sequence[CaptionRecord], optimizer=None, update: bool = True
    ) -> tuple[float, list[RewardStats]]:
        """Self-critical surrogate: -(r(sample) - r(greedy)) * sum log-probs."""
        total, _, _, stats = self._run_step(batch, "rl", use_recon=False,
                                            optimizer=optimizer, update=update)
        return total, stats

    def joint_step(
        self,
        batch: Sequence[CaptionRecord],
        ed_mode: str = "xe",
        optimizer=None,
        update: bool = True,
    ) -> tuple[float, dict[str, float]]:
        """Caption term plus lam * reconstruction term, one backward pass."""
        if self.recon is None and self.lam > 0:
            raise TrainError("joint_step needs a configured reconstructor")
        total, ed_val, recon_val, _ = self._run_step(
            batch, ed_mode, use_recon=self.recon is not None,
            optimizer=optimizer, update=update,
        )
        return total, {"ed": ed_val, "recon": recon_val, "total": total}

    # --- evaluation helpers ---------------------------------------------------

    def validation_cider(self) -> float:
        if not self.val_ids:
            return 0.0
        candidates = [
            self.decoder.greedy_decode(self.corpus.features[vid]) for vid in self.val_ids
        ]
        corpus_score, _ = cider_metric(
            candidates, self.val_refs, self.val_df, self.config.cider_variant
        )
        return corpus_score

    # --- stage and pipeline ----------------------------------------------------

    def run_stage(
        self,
        kind: str,
        max_epochs: int | None = None,
        patience: int | None = None,
        progress: ProgressFn | None = None,
    ) -> list[EpochEntry]:
        """One training stage; restores its best-CIDEr parameters at the end."""
        if kind not in ("xe", "joint", "rl", "rl-joint"):
            raise TrainError(f"unknown stage kind {kind!r}")
        ed_mode = "xe" if kind in ("xe", "joint") else "rl"
        use_recon = kind in ("joint", "rl-joint") and self.recon is not None
        max_epochs = self.config.max_epochs if max_epochs is None else max_epochs
        patience = self.config.patience if patience is None else patience
        optimizer = self._make_optimizer(kind)
        stopper = EarlyStopper(patience)
        best_params = self.snapshot_params()
        entries: list[EpochEntry] = []
        for _ in range(max_epochs):
            self.epoch_counter += 1
            order = self._order_rng.permutation(len(self.train_pairs))
            ed_sum = recon_sum = total_sum = 0.0
            n_batches = 0
            for lo in range(0, len(order), self.config.batch_size):
                batch = [self.train_pairs[i] for i in order[lo : lo + self.config.batch_size]]
                total, ed_val, recon_val, _ = self._run_step(
                    batch, ed_mode, use_recon, optimizer=optimizer
                )
                if not np.isfinite(total):
                    raise NumericsError(kind, self.epoch_counter, total)
                ed_sum += ed_val
                recon_sum += recon_val
                total_sum += total
                n_batches += 1
            entry = EpochEntry(
                stage=kind,
                epoch=self.epoch_counter,
                ed_loss=ed_sum / n_batches,
                recon_loss=recon_sum / n_batches,
                total_loss=total_sum / n_batches,
                val_cider=self.validation_cider(),
            )
            entries.append(entry)
            if progress is not None:
                progress(entry)
            stop = stopper.update(entry.val_cider)
            if stopper.improved:
                best_params = self.snapshot_params()
            if stop:
                break
        self.last_epoch_params = self.snapshot_params()
        self.load_params(best_params)
        return entries

    def train(self, progress: ProgressFn | None = None) -> TrainResult:
        entries: list[EpochEntry] = []
        self.last_epoch_params = self.snapshot_params()
        for kind in self.config.stage_sequence():
            entries.extend(self.run_stage(kind, progress=progress))
        final_params = self.last_epoch_params
        best_cider = max((e.val_cider for e in entries), default=0.0)
        ckpt = Checkpoint(
            vocab=self.corpus.vocab,
            config=self.config,
            epoch=self.epoch_counter,
            best_val_cider=best_cider,
            params=self.snapshot_params(),
        )
        return TrainResult(
            checkpoint=ckpt,
            entries=entries,
            best_val_cider=best_cider,
            final_params=final_params,
        )


def train(
    config: TrainConfig, corpus: Corpus, splits: Splits, progress: ProgressFn | None = None
) -> TrainResult:
    return Trainer(config, corpus, splits).train(progress=progress)


# --- checkpoint-driven evaluation and diagnostics ---------------------------


def evaluate(
    ckpt: Checkpoint, corpus: Corpus, video_ids: Sequence[str], beam: int = 5
) -> MetricReport:
    """Beam-decode every id and score against its references.

    Ids without features or references are reported to stderr and skipped.
    """
    decoder, _ = models_from_checkpoint(ckpt)
    candidates = []
    reference_sets = []
    skipped = []
    for vid in video_ids:
        if vid not in corpus.features or not corpus.captions.get(vid):
            skipped.append(vid)
            continue
        candidates.append(decoder.beam_search(corpus.features[vid], beam=beam))
        reference_sets.append([rec.tokens for rec in corpus.captions[vid]])
    if skipped:
        import sys

        print(f"warning: skipped unknown video ids: {skipped}", file=sys.stderr)
    if not candidates:
        raise TrainError("no evaluable videos in the split")
    return compute_report(
        candidates, reference_sets, cider_variant=ckpt.config.cider_variant
    )


def next_token_accuracy(
    decoder: AttentionDecoder, corpus: Corpus, video_ids: Sequence[str]
) -> float:
    """Teacher-forced argmax accuracy over every caption step (EOS included)."""
    correct = 0
    total = 0
    with ad.no_grad():
        for vid in video_ids:
            for rec in corpus.captions.get(vid, []):
                if not rec.tokens:
                    continue
                _, trace = decoder.teacher_forced(corpus.features[vid], rec.tokens)
                for x, target in zip(trace.logits, trace.tokens):
                    correct += int(np.argmax(x.data) == target)
                    total += 1
    if total == 0:
        raise TrainError("no caption steps to score")
    return correct / total


def hidden_diagnostic(
    ckpt: Checkpoint, corpus: Corpus, video_ids: Sequence[str], csv_path
) -> float:
    """Last-hidden-state export under teacher forcing vs free-running decode.

    Writes one CSV row per (video, caption) pair and mode; returns the
    Euclidean distance between the two mode centroids.
    """
    if not video_ids:
        raise TrainError("empty split for hidden diagnostic")
    decoder, _ = models_from_checkpoint(ckpt)
    hdim = decoder.config.hidden_dim
    teacher_states: list[np.ndarray] = []
    free_states: list[np.ndarray] = []
    rows: list[str] = []
    with ad.no_grad():
        for vid in video_ids:
            feats = corpus.features.get(vid)
            if feats is None:
                continue
            free_h: np.ndarray | None = None
            for rec in corpus.captions.get(vid, []):
                if not rec.tokens:
                    continue
                _, trace = decoder.teacher_forced(feats, rec.tokens)
                t_h = trace.hidden[-1].data
                if free_h is None:
                    free_h = decoder.greedy_trace(feats).hidden[-1].data
                teacher_states.append(t_h)
                free_states.append(free_h)
                rows.append(
                    "teacher," + vid + "," + ",".join(repr(v) for v in t_h)
                )
                rows.append("free," + vid + "," + ",".join(repr(v) for v in free_h))
    if not teacher_states:
        raise TrainError("no usable (video, caption) pairs in the split")
    header = "mode,video_id," + ",".join(f"dim_{i}" for i in range(hdim))
    Path(csv_path).write_text(header + "\n" + "\n".join(rows) + "\n")
    centroid_t = np.mean(teacher_states, axis=0)
    centroid_f = np.mean(free_states, axis=0)
    return float(np.linalg.norm(centroid_t - centroid_f))
