"""Depth estimation from masked-reconstruction loss.

An anytime-prediction masked language model (one shared vocabulary
classifier read at every layer, per-layer losses summed with equal
weights) is trained on the task corpus. To estimate a token's depth, the
token is replaced by ``<MASK>``, the sentence runs through the full
stack, and the layer whose reconstruction loss -- plus a linear penalty
``penalty * layer`` that biases the choice shallow -- is smallest becomes
the token's depth. Labels are never consulted, so this estimator also
covers the test split and unlabeled text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import Corpus, Vocab
from .encoder import HEAD_MLM, AdaptiveEncoder, EncoderConfig
from .optim import adam_step
from .train import length_buckets

DEFAULT_PENALTY = 0.1
N_SPECIAL_TOKENS = 3  # <PAD>, <UNK>, <MASK> are never sampled as replacements


@dataclass(frozen=True)
class ReconConfig:
    penalty: float = DEFAULT_PENALTY
    chunk_rows: int = 32  # masked sentence variants per estimation forward

    def __post_init__(self) -> None:
        if self.penalty < 0:
            raise ValueError(f"penalty must be >= 0, got {self.penalty}")


def mask_batch(
    ids: np.ndarray,
    mask_id: int,
    vocab_size: int,
    rng: np.random.Generator,
    mask_rate: float = 0.15,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BERT-style corruption: per sentence pick ~rate positions, then
    80% become <MASK>, 10% a random word, 10% stay unchanged.

    Returns (corrupted ids, flat indices into batch*time, true ids).
    """
    if mask_rate <= 0 or mask_rate >= 1:
        raise ValueError(f"mask rate must be in (0, 1), got {mask_rate}")
    if vocab_size <= N_SPECIAL_TOKENS:
        raise ValueError("vocabulary has no regular words to sample replacements from")
    batch, time = ids.shape
    corrupted = ids.copy()
    flat_idx: list[int] = []
    true_ids: list[int] = []
    n_mask = max(1, int(round(mask_rate * time)))
    for b in range(batch):
        positions = rng.choice(time, size=n_mask, replace=False)
        for t in positions:
            flat_idx.append(b * time + int(t))
            true_ids.append(int(ids[b, t]))
            roll = rng.random()
            if roll < 0.8:
                corrupted[b, t] = mask_id
            elif roll < 0.9:
                corrupted[b, t] = rng.integers(N_SPECIAL_TOKENS, vocab_size)
    return corrupted, np.asarray(flat_idx, dtype=np.int64), np.asarray(true_ids, dtype=np.int64)


def anytime_loss_on_docs(
    encoder: AdaptiveEncoder,
    docs_tokens: list[np.ndarray],
    vocab: Vocab,
    seed: int = 0,
    mask_rate: float = 0.15,
    batch_size: int = 32,
) -> float:
    """Deterministic summed anytime loss over a document slice.

    Masking uses its own generator seeded here, so evaluation never
    perturbs a caller's RNG stream. Returns the per-masked-position loss
    summed over layers, averaged over all batches by masked count.
    """
    rng = np.random.default_rng(seed)
    lengths = [len(t) for t in docs_tokens]
    total = 0.0
    n_masked = 0
    for idx in length_buckets(lengths, batch_size):
        ids = np.stack([docs_tokens[i] for i in idx])
        corrupted, flat_idx, true_ids = mask_batch(
            ids, vocab.mask_id, len(vocab), rng, mask_rate
        )
        loss, _ = encoder.mlm_anytime_loss_graph(corrupted, flat_idx, true_ids, train=False)
        total += float(loss.data) * flat_idx.size
        n_masked += flat_idx.size
    return total / n_masked


@dataclass
class MlmTrainResult:
    encoder: AdaptiveEncoder
    log: list[tuple[int, float]]  # (step, train loss)
    heldout_log: list[tuple[int, float]]  # (step, held-out anytime loss)
    heldout_initial: float
    heldout_final: float


def train_mlm(
    corpus: Corpus,
    config: EncoderConfig,
    steps: int,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
    mask_rate: float = 0.15,
    clip: float = 5.0,
    warmup: int = 0,
    heldout_fraction: float = 0.1,
    eval_every: int = 0,
) -> MlmTrainResult:
    """Train the anytime MLM from scratch at full depth.

    A trailing slice of the corpus is held out from the sampled batches
    and scored before and after training; with ``steps=0`` the returned
    checkpoint is exactly the initialization.
    """
    if mask_rate <= 0:
        raise ValueError(f"mask rate must be positive, got {mask_rate}")
    model_seed, data_seed, eval_seed = np.random.SeedSequence(seed).spawn(3)
    encoder = AdaptiveEncoder(config, HEAD_MLM, seed=int(model_seed.generate_state(1)[0]))
    data_rng = np.random.default_rng(data_seed)
    eval_seed = int(eval_seed.generate_state(1)[0])

    n_heldout = max(1, int(len(corpus.documents) * heldout_fraction))
    train_docs = [d.tokens for d in corpus.documents[:-n_heldout]]
    heldout_docs = [d.tokens for d in corpus.documents[-n_heldout:]]
    if not train_docs:
        raise ValueError("corpus too small to hold out an evaluation slice")

    def heldout_loss() -> float:
        return anytime_loss_on_docs(encoder, heldout_docs, corpus.vocab, seed=eval_seed, mask_rate=mask_rate)

    initial = heldout_loss()
    heldout_log: list[tuple[int, float]] = [(0, initial)]
    lengths = [len(t) for t in train_docs]
    log: list[tuple[int, float]] = []
    step = 0
    while step < steps:
        for idx in length_buckets(lengths, batch_size, data_rng):
            if step >= steps:
                break
            ids = np.stack([train_docs[i] for i in idx])
            corrupted, flat_idx, true_ids = mask_batch(
                ids, corpus.vocab.mask_id, len(corpus.vocab), data_rng, mask_rate
            )
            loss, _ = encoder.mlm_anytime_loss_graph(corrupted, flat_idx, true_ids, train=True)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"MLM training diverged at step {step}: loss={loss.data}")
            encoder.store.zero_grad()
            ad.backward(loss)
            cur_lr = lr * min(1.0, (step + 1) / warmup) if warmup else lr
            adam_step(encoder.store, lr=cur_lr, clip=clip)
            step += 1
            log.append((step, float(loss.data)))
            if eval_every and step % eval_every == 0:
                heldout_log.append((step, heldout_loss()))
    if heldout_log[-1][0] == step:
        final = heldout_log[-1][1]
    else:
        final = heldout_loss() if steps else initial
        heldout_log.append((step, final))
    return MlmTrainResult(
        encoder=encoder,
        log=log,
        heldout_log=heldout_log,
        heldout_initial=initial,
        heldout_final=final,
    )


# ---------------------------------------------------------------------------
# depth selection


def layer_losses(encoder: AdaptiveEncoder, tokens: np.ndarray, position: int, mask_id: int) -> np.ndarray:
    """Per-layer reconstruction loss of the token at ``position``.

    The sentence is fed once at full depth with that single position
    masked; the shared classifier scores the true token at every layer.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if not 0 <= position < len(tokens):
        raise ValueError(f"position {position} outside sentence of length {len(tokens)}")
    corrupted = tokens.copy()
    corrupted[position] = mask_id
    layer_states, _ = encoder.forward_infer(corrupted[None, :], None, collect_layers=True)
    true_id = int(tokens[position])
    profile = np.empty(len(layer_states), dtype=np.float64)
    for n, h in enumerate(layer_states):
        log_probs = encoder.mlm_log_probs_infer(h[0, position : position + 1])
        profile[n] = -float(log_probs[0, true_id])
    return profile


def sentence_profiles(
    encoder: AdaptiveEncoder, tokens: np.ndarray, mask_id: int, chunk_rows: int = 32
) -> np.ndarray:
    """Loss profiles for every position of one sentence, shape (len, N).

    Each forward still masks exactly one position; the masked variants of
    the sentence are merely batched together for throughput.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    time = len(tokens)
    profiles = np.empty((time, encoder.config.n_layers), dtype=np.float64)
    for start in range(0, time, chunk_rows):
        stop = min(start + chunk_rows, time)
        variants = np.tile(tokens, (stop - start, 1))
        rows = np.arange(stop - start)
        variants[rows, np.arange(start, stop)] = mask_id
        layer_states, _ = encoder.forward_infer(variants, None, collect_layers=True)
        for n, h in enumerate(layer_states):
            masked_states = h[rows, np.arange(start, stop)]
            log_probs = encoder.mlm_log_probs_infer(masked_states)
            profiles[start:stop, n] = -log_probs[rows, tokens[start:stop]]
    return profiles


def select_depth(profile: np.ndarray, penalty: float) -> int:
    """Penalized argmin over layers, 1-based; ties go to the shallowest.

    The linear term charges each extra layer ``penalty``, so raising the
    penalty can only move the choice shallower.
    """
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 1 or profile.size < 1:
        raise ValueError(f"profile must be a non-empty vector, got shape {profile.shape}")
    if not np.all(np.isfinite(profile)):
        raise ValueError("profile contains non-finite losses")
    scores = profile + penalty * np.arange(1, profile.size + 1, dtype=np.float64)
    return int(scores.argmin()) + 1


def depths_from_profiles(profiles: list[np.ndarray], penalty: float) -> list[np.ndarray]:
    return [
        np.asarray([select_depth(p, penalty) for p in sentence], dtype=np.int64)
        for sentence in profiles
    ]


def corpus_profiles(
    encoder: AdaptiveEncoder, corpus: Corpus, chunk_rows: int = 32
) -> list[np.ndarray]:
    """Loss profiles for every sentence of a split; label-free."""
    mask_id = corpus.vocab.mask_id
    return [
        sentence_profiles(encoder, doc.tokens, mask_id, chunk_rows) for doc in corpus.documents
    ]


def estimate_corpus_depths(
    encoder: AdaptiveEncoder,
    corpus: Corpus,
    penalty: float = DEFAULT_PENALTY,
    chunk_rows: int = 32,
) -> tuple[list[np.ndarray], float]:
    """Depth maps for a whole split plus the token-average depth."""
    profiles = corpus_profiles(encoder, corpus, chunk_rows)
    depth_maps = depths_from_profiles(profiles, penalty)
    return depth_maps, average_depth(depth_maps)


def average_depth(depth_maps: list[np.ndarray]) -> float:
    total = sum(int(d.sum()) for d in depth_maps)
    count = sum(len(d) for d in depth_maps)
    return total / count if count else 0.0
