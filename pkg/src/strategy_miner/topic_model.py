"""Latent Dirichlet Allocation over session clickstreams.

Sessions play the role of documents and click types the role of words.
Inference is collapsed Gibbs sampling; uniforms are drawn from a seeded
numpy Generator per sweep and consumed by a compiled kernel, so chains are
reproducible bit for bit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit

from .pattern_miner import as_token_lists


def asymmetric_alpha(k: int) -> np.ndarray:
    """alpha_t proportional to 1 / (t + sqrt(k)), t = 1..k, summing to 1."""
    raw = 1.0 / (np.arange(1, k + 1) + math.sqrt(k))
    return raw / raw.sum()


@dataclass
class LdaConfig:
    k: int = 9
    alpha: list[float] | None = None
    beta: float = 0.01
    iterations: int = 1000
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.alpha is None:
            self.alpha = asymmetric_alpha(self.k).tolist()
        if len(self.alpha) != self.k or min(self.alpha) <= 0:
            raise ValueError("alpha needs k positive entries")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")


@njit(cache=True)
def _sweep(words, doc_of, z, n_dt, n_tw, n_t, alpha, beta, v_beta, u):
    k = n_dt.shape[1]
    p = np.empty(k)
    for i in range(words.shape[0]):
        w = words[i]
        d = doc_of[i]
        t = z[i]
        n_dt[d, t] -= 1
        n_tw[t, w] -= 1
        n_t[t] -= 1
        total = 0.0
        for s in range(k):
            total += (n_tw[s, w] + beta) / (n_t[s] + v_beta) * (n_dt[d, s] + alpha[s])
            p[s] = total
        r = u[i] * total
        t = 0
        while t < k - 1 and p[t] <= r:
            t += 1
        z[i] = t
        n_dt[d, t] += 1
        n_tw[t, w] += 1
        n_t[t] += 1


@njit(cache=True)
def _fold_in_sweep(words, z, n_t_doc, phi, alpha, u):
    k = phi.shape[0]
    p = np.empty(k)
    for i in range(words.shape[0]):
        w = words[i]
        n_t_doc[z[i]] -= 1
        total = 0.0
        for s in range(k):
            total += phi[s, w] * (n_t_doc[s] + alpha[s])
            p[s] = total
        r = u[i] * total
        t = 0
        while t < k - 1 and p[t] <= r:
            t += 1
        z[i] = t
        n_t_doc[t] += 1


class GibbsSampler:
    """Collapsed Gibbs state: assignments plus document-topic and topic-word counts."""

    def __init__(self, docs: list[list[int]], vocab_size: int, config: LdaConfig):
        self.config = config
        self.V = vocab_size
        self.alpha = np.asarray(config.alpha, dtype=float)
        self.lengths = np.array([len(d) for d in docs], dtype=np.int64)
        self.words = np.array([w for d in docs for w in d], dtype=np.int64)
        self.doc_of = np.repeat(np.arange(len(docs), dtype=np.int64), self.lengths)
        if self.words.size and (self.words.min() < 0 or self.words.max() >= vocab_size):
            raise ValueError("click type id outside vocabulary")
        self.rng = np.random.default_rng(config.seed)
        k = config.k
        self.z = self.rng.integers(0, k, size=self.words.size).astype(np.int64)
        self.n_dt = np.zeros((len(docs), k), dtype=np.int64)
        self.n_tw = np.zeros((k, vocab_size), dtype=np.int64)
        np.add.at(self.n_dt, (self.doc_of, self.z), 1)
        np.add.at(self.n_tw, (self.z, self.words), 1)
        self.n_t = self.n_tw.sum(axis=1)

    def sweep(self) -> None:
        u = self.rng.random(self.words.size)
        _sweep(self.words, self.doc_of, self.z, self.n_dt, self.n_tw, self.n_t,
               self.alpha, self.config.beta, self.V * self.config.beta, u)

    def counts_consistent(self) -> bool:
        return (np.array_equal(self.n_dt.sum(axis=1), self.lengths)
                and np.array_equal(self.n_tw.sum(axis=1), np.bincount(self.z, minlength=self.config.k))
                and np.array_equal(self.n_t, self.n_tw.sum(axis=1))
                and int(self.n_tw.sum()) == self.words.size)

    def phi(self) -> np.ndarray:
        phi = self.n_tw + self.config.beta
        return phi / phi.sum(axis=1, keepdims=True)

    def theta(self) -> np.ndarray:
        theta = self.n_dt + self.alpha
        return theta / theta.sum(axis=1, keepdims=True)


@dataclass
class TopicModel:
    phi: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    config: LdaConfig
    doc_lengths: np.ndarray = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.phi.shape[0]

    def to_json(self) -> dict:
        return dict(config=asdict(self.config), phi=self.phi.tolist(),
                    theta=self.theta.tolist())

    @classmethod
    def from_json(cls, row: dict) -> "TopicModel":
        cfg = LdaConfig(**row["config"])
        return cls(np.asarray(row["phi"], float), np.asarray(row["theta"], float),
                   np.zeros(0, dtype=np.int64), cfg)


def _renormalize(m: np.ndarray) -> np.ndarray:
    return m / m.sum(axis=1, keepdims=True)


def fit_lda(sessions, config: LdaConfig | None = None, vocab_size: int | None = None
            ) -> TopicModel:
    """Fit by collapsed Gibbs; phi/theta are averaged over post-burn-in sweeps."""
    config = config or LdaConfig()
    docs = as_token_lists(sessions)
    if not any(docs):
        raise ValueError("corpus has no clicks")
    if vocab_size is None:
        vocab_size = max(max(d) for d in docs if d) + 1
    sampler = GibbsSampler(docs, vocab_size, config)
    phi_sum = np.zeros((config.k, vocab_size))
    theta_sum = np.zeros((len(docs), config.k))
    kept = 0
    for it in range(config.iterations):
        sampler.sweep()
        if it >= config.burn_in:
            phi_sum += sampler.phi()
            theta_sum += sampler.theta()
            kept += 1
    return TopicModel(_renormalize(phi_sum / kept), _renormalize(theta_sum / kept),
                      sampler.z.copy(), config, sampler.lengths)


def top_click_types(model: TopicModel, topic: int, j: int = 5) -> list[tuple[int, float]]:
    if not 0 <= topic < model.k:
        raise ValueError(f"topic {topic} out of range")
    row = model.phi[topic]
    order = sorted(range(row.size), key=lambda w: (-row[w], w))
    return [(w, float(row[w])) for w in order[:j]]


def coherence_detail(model: TopicModel, corpus, topic: int, top_j: int = 10
                     ) -> tuple[float, list[tuple[int, int]]]:
    """UMass coherence of one topic plus the (w_i, w_j) pairs skipped for D(w_j) = 0."""
    docs = [set(d) for d in as_token_lists(corpus)]
    if not docs:
        raise ValueError("corpus must be non-empty")
    top = [w for w, _ in top_click_types(model, topic, top_j)]
    score = 0.0
    skipped = []
    for i in range(len(top)):
        for jx in range(i + 1, len(top)):
            wi, wj = top[i], top[jx]
            d_j = sum(wj in d for d in docs)
            if d_j == 0:
                skipped.append((wi, wj))
                continue
            d_ij = sum(wi in d and wj in d for d in docs)
            score += math.log((d_ij + 1) / d_j)
    return score, skipped


def coherence(model: TopicModel, corpus, topic: int, top_j: int = 10) -> float:
    score, skipped = coherence_detail(model, corpus, topic, top_j)
    if skipped:
        warnings.warn(f"topic {topic}: skipped {len(skipped)} pairs with zero document frequency")
    return score


def infer_theta(model: TopicModel, session, iterations: int = 200, burn_in: int = 50,
                seed: int = 0) -> np.ndarray:
    """Fold-in Gibbs for one held-out session with phi held fixed."""
    words = np.asarray(as_token_lists([session])[0], dtype=np.int64)
    alpha = np.asarray(model.config.alpha, dtype=float)
    if words.size == 0:
        return alpha / alpha.sum()
    rng = np.random.default_rng(seed)
    z = rng.integers(0, model.k, size=words.size).astype(np.int64)
    n_t = np.bincount(z, minlength=model.k).astype(np.int64)
    acc = np.zeros(model.k)
    for it in range(iterations):
        _fold_in_sweep(words, z, n_t, model.phi, alpha, rng.random(words.size))
        if it >= burn_in:
            acc += (n_t + alpha) / (words.size + alpha.sum())
    return acc / acc.sum()
