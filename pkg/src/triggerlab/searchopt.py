"""Combinatorial outlier-word elimination: discrete PSO and a genetic algorithm.

Both methods search over binary deletion masks (one bit per original token,
true = delete) for the mask whose surviving sentence has the lowest
perplexity. PSO maximizes -perplexity; the GA maximizes the perplexity drop
relative to the full sentence. The two objectives differ by the constant p0,
so they rank masks identically.

Masks never delete every token: any all-true mask produced along the way is
repaired by clearing the bit whose token has the smallest suspicion score.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import onion
from .lm import PerplexityScorer
from .textcore import Sentence, make_rng

EPS = 1e-6

DeletionMask = np.ndarray  # bool vector, one entry per original token


def apply_mask(sentence: Sentence, mask: DeletionMask) -> Sentence:
    if len(mask) != len(sentence):
        raise ValueError("mask length does not match sentence length")
    if len(mask) and bool(np.all(mask)):
        raise ValueError("mask would delete every token")
    return Sentence(tuple(t for t, dead in zip(sentence.tokens, mask) if not dead))


def pso_score(scorer: PerplexityScorer, original: Sentence, mask: DeletionMask) -> float:
    """Optimization score of a position: negative perplexity of the survivor."""
    return -scorer.perplexity(apply_mask(original, mask))


def ga_fitness(scorer: PerplexityScorer, original: Sentence, mask: DeletionMask) -> float:
    """Perplexity drop from the raw sentence to the masked one; higher is fitter."""
    return scorer.perplexity(original) - scorer.perplexity(apply_mask(original, mask))


class _MaskEvaluator:
    """Per-search cache so each distinct mask hits the scorer once."""

    def __init__(self, scorer: PerplexityScorer, sentence: Sentence):
        self.scorer = scorer
        self.sentence = sentence
        self._cache: dict[bytes, float] = {}

    def perplexity(self, mask: DeletionMask) -> float:
        key = mask.tobytes()
        val = self._cache.get(key)
        if val is None:
            val = self.scorer.perplexity(apply_mask(self.sentence, mask))
            self._cache[key] = val
        return val

    def score(self, mask: DeletionMask) -> float:
        return -self.perplexity(mask)


def _repair(mask: DeletionMask, fvals: np.ndarray) -> DeletionMask:
    # keep the least suspicious token rather than emit an empty sentence
    if bool(np.all(mask)):
        mask[int(np.argmin(fvals))] = False
    return mask


@dataclass(frozen=True)
class PsoConfig:
    N: int = 60
    T: int = 20
    omega_max: float = 0.8
    omega_min: float = 0.2
    p_max: float = 0.8
    p_min: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.T < 1:
            raise ValueError("N and T must be >= 1")
        if not 0.0 < self.omega_min < self.omega_max < 1.0:
            raise ValueError("need 0 < omega_min < omega_max < 1")
        if not 0.0 < self.p_min < self.p_max < 1.0:
            raise ValueError("need 0 < p_min < p_max < 1")


@dataclass(frozen=True)
class GaConfig:
    N: int = 60
    T: int = 20
    init_delete_probs: tuple[float, ...] = (0.1, 0.2, 0.3)
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.init_delete_probs or any(not 0.0 < p < 1.0 for p in self.init_delete_probs):
            raise ValueError("init_delete_probs must lie strictly inside (0, 1)")


@dataclass
class Particle:
    position: DeletionMask
    velocity: np.ndarray
    best_position: DeletionMask
    best_score: float


def inertia(cfg: PsoConfig, t: int) -> float:
    """Linearly decaying inertia weight: omega_max at t=0, omega_min at t=T."""
    return (cfg.omega_max - cfg.omega_min) * (cfg.T - t) / cfg.T + cfg.omega_min


def move_probs(cfg: PsoConfig, t: int) -> tuple[float, float]:
    """Movement probabilities toward the individual and global bests.

    Both decay linearly; the global one goes negative late in the schedule as
    written, so values are clamped into [0, 1].
    """
    span = cfg.p_max - cfg.p_min
    p_i = cfg.p_max - (t / cfg.T) * span
    p_g = cfg.p_min - (t / cfg.T) * span
    clamp = lambda p: min(max(p, 0.0), 1.0)
    return clamp(p_i), clamp(p_g)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-v))


def init_weights(scores: np.ndarray) -> np.ndarray:
    """Single-deletion sampling weights: max(f, 0) floored by EPS so every
    index stays reachable."""
    w = np.maximum(np.asarray(scores, dtype=float), 0.0) + EPS
    return w / w.sum()


def pso_init(
    scorer: PerplexityScorer,
    sentence: Sentence,
    cfg: PsoConfig,
    rng: np.random.Generator,
    *,
    profile: onion.SuspicionProfile | None = None,
    evaluator: _MaskEvaluator | None = None,
) -> list[Particle]:
    """Population of single-deletion particles, deletion index sampled in
    proportion to the token's suspicion score."""
    d = len(sentence)
    if d < 2:
        raise ValueError("search needs a sentence of at least two tokens")
    if profile is None:
        profile = onion.suspicion_profile(scorer, sentence)
    ev = evaluator or _MaskEvaluator(scorer, sentence)
    probs = init_weights(np.array(profile.scores))
    particles = []
    for _ in range(cfg.N):
        pos = np.zeros(d, dtype=bool)
        pos[int(rng.choice(d, p=probs))] = True
        vel = rng.uniform(-1.0, 1.0, size=d)
        particles.append(Particle(pos, vel, pos.copy(), ev.score(pos)))
    return particles


def pso_step(
    population: list[Particle],
    best_mask: DeletionMask,
    best_score: float,
    cfg: PsoConfig,
    t: int,
    rng: np.random.Generator,
    *,
    evaluator: _MaskEvaluator,
    fvals: np.ndarray,
) -> tuple[DeletionMask, float]:
    """One swarm update; mutates particles in place, returns the new global best.

    Velocities move toward agreement with the individual and global bests;
    positions then adopt best-position bits dimension-wise with probability
    sigmoid(velocity), gated by the two movement probabilities.
    """
    if not 0 <= t < cfg.T:
        raise ValueError(f"iteration index {t} outside [0, {cfg.T})")
    w = inertia(cfg, t)
    p_i, p_g = move_probs(cfg, t)
    for particle in population:
        x = particle.position
        gamma_ind = np.where(particle.best_position == x, 1.0, -1.0)
        gamma_glob = np.where(best_mask == x, 1.0, -1.0)
        particle.velocity = w * particle.velocity + (1.0 - w) * (gamma_ind + gamma_glob)
        if rng.random() < p_i:
            take = rng.random(len(x)) < _sigmoid(particle.velocity)
            x = np.where(take, particle.best_position, x)
        if rng.random() < p_g:
            take = rng.random(len(x)) < _sigmoid(particle.velocity)
            x = np.where(take, best_mask, x)
        x = _repair(np.array(x, dtype=bool), fvals)
        particle.position = x
        score = evaluator.score(x)
        if score > particle.best_score:
            particle.best_score = score
            particle.best_position = x.copy()
        if score > best_score:
            best_score = score
            best_mask = x.copy()
    return best_mask, best_score


def pso_best_mask(
    scorer: PerplexityScorer,
    sentence: Sentence,
    cfg: PsoConfig,
    *,
    history: list[float] | None = None,
) -> DeletionMask:
    """Run the swarm until the global best stalls for a full iteration or t = T."""
    rng = make_rng(cfg.seed)
    profile = onion.suspicion_profile(scorer, sentence)
    fvals = np.array(profile.scores, dtype=float)
    ev = _MaskEvaluator(scorer, sentence)
    population = pso_init(scorer, sentence, cfg, rng, profile=profile, evaluator=ev)
    best = max(population, key=lambda p: p.best_score)
    best_mask, best_score = best.best_position.copy(), best.best_score
    for t in range(cfg.T):
        prev = best_score
        best_mask, best_score = pso_step(
            population, best_mask, best_score, cfg, t, rng, evaluator=ev, fvals=fvals
        )
        if history is not None:
            history.append(best_score)
        if not best_score > prev:
            break
    return best_mask


def pso_search(
    scorer: PerplexityScorer,
    sentence: Sentence,
    cfg: PsoConfig,
    *,
    history: list[float] | None = None,
) -> Sentence:
    return apply_mask(sentence, pso_best_mask(scorer, sentence, cfg, history=history))


def crossover(parent_a: DeletionMask, parent_b: DeletionMask, k: int) -> DeletionMask:
    """Single split on the original index space: a's bits before k, b's after."""
    return np.concatenate([parent_a[:k], parent_b[k:]])


def _mutate(child: DeletionMask, evaluator: _MaskEvaluator) -> DeletionMask:
    """Delete the one surviving token whose removal minimizes perplexity.

    Skipped when only one token survives (never empty the sentence).
    """
    alive = np.flatnonzero(~child)
    if len(alive) <= 1:
        return child
    best_i = None
    best_ppl = None
    for i in alive:
        candidate = child.copy()
        candidate[i] = True
        ppl = evaluator.perplexity(candidate)
        if best_ppl is None or ppl < best_ppl:
            best_ppl = ppl
            best_i = int(i)
    out = child.copy()
    out[best_i] = True
    return out


def ga_best_mask(
    scorer: PerplexityScorer,
    sentence: Sentence,
    cfg: GaConfig,
    *,
    history: list[float] | None = None,
) -> DeletionMask:
    """Generational GA with fitness-proportional parent selection.

    Parents are drawn with probability proportional to fitness shifted to a
    nonnegative range; termination mirrors PSO: stop once a full generation
    fails to improve the best fitness seen so far.
    """
    d = len(sentence)
    if d < 2:
        raise ValueError("search needs a sentence of at least two tokens")
    rng = make_rng(cfg.seed)
    profile = onion.suspicion_profile(scorer, sentence)
    fvals = np.array(profile.scores, dtype=float)
    ev = _MaskEvaluator(scorer, sentence)
    p0 = profile.p0

    def fitness(mask: DeletionMask) -> float:
        return p0 - ev.perplexity(mask)

    population = []
    for _ in range(cfg.N):
        p_del = cfg.init_delete_probs[int(rng.integers(len(cfg.init_delete_probs)))]
        mask = _repair(rng.random(d) < p_del, fvals)
        population.append(mask)
    fits = np.array([fitness(m) for m in population])
    best_idx = int(np.argmax(fits))
    best_mask, best_fit = population[best_idx].copy(), float(fits[best_idx])

    for _ in range(cfg.T):
        prev = best_fit
        shifted = fits - fits.min() + EPS
        probs = shifted / shifted.sum()
        children = []
        for _ in range(cfg.N):
            pa = population[int(rng.choice(cfg.N, p=probs))]
            pb = population[int(rng.choice(cfg.N, p=probs))]
            k = int(rng.integers(1, d))
            child = _repair(crossover(pa, pb, k), fvals)
            children.append(_mutate(child, ev))
        population = children
        fits = np.array([fitness(m) for m in population])
        gen_best = int(np.argmax(fits))
        if float(fits[gen_best]) > best_fit:
            best_fit = float(fits[gen_best])
            best_mask = population[gen_best].copy()
        if history is not None:
            history.append(best_fit)
        if not best_fit > prev:
            break
    return best_mask


def ga_search(
    scorer: PerplexityScorer,
    sentence: Sentence,
    cfg: GaConfig,
    *,
    history: list[float] | None = None,
) -> Sentence:
    return apply_mask(sentence, ga_best_mask(scorer, sentence, cfg, history=history))


def make_search_sanitizer(method: str, scorer: PerplexityScorer, cfg):
    """Sentence -> (sanitized, removed indices) closure over a search defense.

    Gives each sentence its own seed derived from the configured seed and the
    sentence text, so dataset-level results do not depend on evaluation order.
    Sentences too short to search pass through unchanged.
    """
    if method == "pso":
        search = pso_best_mask
    elif method == "ga":
        search = ga_best_mask
    else:
        raise ValueError(f"unknown search method {method!r}")

    def _sanitize(sentence: Sentence) -> tuple[Sentence, set[int]]:
        if len(sentence) < 2:
            return sentence, set()
        seed = (cfg.seed * 2654435761 + zlib.crc32(sentence.text().encode("utf-8"))) % (2**63)
        mask = search(scorer, sentence, replace(cfg, seed=seed))
        return apply_mask(sentence, mask), {int(i) for i in np.flatnonzero(mask)}

    return _sanitize
