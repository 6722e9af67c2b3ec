"""Skip-gram embedding of click types trained with sampled NCE.

One linear hidden layer (the embedding) maps a center click type to a
``dim``-vector; the output layer scores context click types. Each batch
shares ``negatives`` noise classes drawn from the unigram^0.75 distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .pattern_miner import as_token_lists


@dataclass
class SkipgramConfig:
    window: int = 1
    dim: int = 4
    negatives: int = 8
    learning_rate: float = 1.0
    batch_size: int = 512
    max_steps: int = 300_000
    plateau_window: int = 2000
    plateau_periods: int = 5
    plateau_tolerance: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("window", "dim", "negatives", "batch_size", "max_steps",
                     "plateau_window", "plateau_periods"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class EmbeddingModel:
    input_weights: np.ndarray
    output_weights: np.ndarray
    output_bias: np.ndarray
    config: SkipgramConfig
    training_log: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.training_log[-1] if self.training_log else float("inf")

    def to_json(self) -> dict:
        return dict(config=asdict(self.config), steps=self.steps,
                    training_log=self.training_log,
                    input_weights=self.input_weights.tolist(),
                    output_weights=self.output_weights.tolist(),
                    output_bias=self.output_bias.tolist())


def build_pairs(sessions, window: int) -> np.ndarray:
    """(center, context) pairs for every offset 0 < |i - j| <= window inside a session."""
    if window < 1:
        raise ValueError("window must be >= 1")
    pairs = []
    for tokens in as_token_lists(sessions):
        n = len(tokens)
        for i in range(n):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    pairs.append((tokens[i], tokens[j]))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def noise_distribution(pairs: np.ndarray, vocab_size: int, power: float = 0.75) -> np.ndarray:
    freq = np.bincount(pairs[:, 1], minlength=vocab_size).astype(float) ** power
    if freq.sum() == 0:
        return np.full(vocab_size, 1.0 / vocab_size)
    return freq / freq.sum()


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def nce_loss_and_grads(centers: np.ndarray, contexts: np.ndarray, noise: np.ndarray,
                       w_in: np.ndarray, w_out: np.ndarray, b_out: np.ndarray):
    """Mean binary-logistic NCE loss over a batch with shared noise classes.

    Per example: ``-log s(h.u_o + b_o) - sum_k log s(-(h.u_k + b_k))``.
    Returns (loss, grad_in, grad_out, grad_bias) with full-shape gradients.
    """
    bsz = centers.size
    h = w_in[centers]                                  # B x D
    pos = np.einsum("bd,bd->b", h, w_out[contexts]) + b_out[contexts]
    neg = h @ w_out[noise].T + b_out[noise]            # B x K
    loss = -(_log_sigmoid(pos).sum() + _log_sigmoid(-neg).sum()) / bsz

    g_pos = (_sigmoid(pos) - 1.0) / bsz                # dL/dpos
    g_neg = _sigmoid(neg) / bsz                        # dL/dneg
    grad_h = g_pos[:, None] * w_out[contexts] + g_neg @ w_out[noise]
    grad_in = np.zeros_like(w_in)
    np.add.at(grad_in, centers, grad_h)
    grad_out = np.zeros_like(w_out)
    np.add.at(grad_out, contexts, g_pos[:, None] * h)
    np.add.at(grad_out, noise, g_neg.T @ h)
    grad_b = np.zeros_like(b_out)
    np.add.at(grad_b, contexts, g_pos)
    np.add.at(grad_b, noise, g_neg.sum(axis=0))
    return float(loss), grad_in, grad_out, grad_b


def init_weights(vocab_size: int, dim: int, rng: np.random.Generator):
    bound = 0.5 / dim
    w_in = rng.uniform(-bound, bound, size=(vocab_size, dim))
    return w_in, np.zeros((vocab_size, dim)), np.zeros(vocab_size)


def plateaued(window_losses: Sequence[float], periods: int, tolerance: float) -> bool:
    """True when each of the last ``periods`` window averages moved < tolerance (relative)."""
    if len(window_losses) < periods + 1:
        return False
    recent = window_losses[-(periods + 1):]
    for prev, cur in zip(recent, recent[1:]):
        if abs(cur - prev) >= tolerance * max(abs(prev), 1e-12):
            return False
    return True


def train_skipgram(pairs: np.ndarray, config: SkipgramConfig | None = None,
                   vocab_size: int | None = None) -> EmbeddingModel:
    config = config or SkipgramConfig()
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.size == 0:
        raise ValueError("no training pairs")
    if vocab_size is None:
        vocab_size = int(pairs.max()) + 1
    rng = np.random.default_rng(config.seed)
    w_in, w_out, b_out = init_weights(vocab_size, config.dim, rng)
    noise_p = noise_distribution(pairs, vocab_size)
    noise_cdf = np.cumsum(noise_p)
    noise_cdf[-1] = 1.0

    n = len(pairs)
    order = rng.permutation(n)
    cursor = 0
    log: list[float] = []
    window_total = 0.0
    lr = config.learning_rate
    step = 0
    while step < config.max_steps:
        if cursor >= n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        noise = np.searchsorted(noise_cdf, rng.random(config.negatives), side="right")
        loss, g_in, g_out, g_b = nce_loss_and_grads(pairs[idx, 0], pairs[idx, 1], noise,
                                                    w_in, w_out, b_out)
        if lr:
            w_in -= lr * g_in
            w_out -= lr * g_out
            b_out -= lr * g_b
        window_total += loss
        step += 1
        if step % config.plateau_window == 0:
            log.append(window_total / config.plateau_window)
            window_total = 0.0
            if plateaued(log, config.plateau_periods, config.plateau_tolerance):
                break
    return EmbeddingModel(w_in, w_out, b_out, config, log, step)


def grid_select(sessions, windows=(1, 2), dims=(3, 4), base: SkipgramConfig | None = None,
                vocab_size: int | None = None) -> tuple[EmbeddingModel, list[dict]]:
    """Train every (window, dim) and keep the lowest final-window average loss.

    Ties go to the smaller window, then the smaller dimension.
    """
    base = base or SkipgramConfig()
    token_lists = as_token_lists(sessions)
    if vocab_size is None:
        vocab_size = max((max(t) for t in token_lists if t), default=-1) + 1
    results = []
    best = None
    for window in sorted(windows):
        pairs = build_pairs(token_lists, window)
        for dim in sorted(dims):
            cfg = SkipgramConfig(**{**asdict(base), "window": window, "dim": dim})
            model = train_skipgram(pairs, cfg, vocab_size)
            results.append(dict(window=window, dim=dim, pairs=len(pairs),
                                steps=model.steps, final_loss=model.final_loss))
            if best is None or model.final_loss < best.final_loss:
                best = model
    return best, results


def distance_matrix(model_or_weights) -> np.ndarray:
    w = getattr(model_or_weights, "input_weights", model_or_weights)
    w = np.asarray(w, dtype=float)
    diff = w[:, None, :] - w[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
