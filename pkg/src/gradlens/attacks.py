"""Adversarial sample generation.

Two attacks on a shared result record:

* ``pgd_attack``: white-box, max-norm budget. Signed-gradient ascent on
  the cross-entropy of the attacked class, projected each step onto the
  max-norm ball around the original image intersected with [0, 1].
* ``pixel_attack``: black-box, pixel-count budget. DE/rand/1/bin over
  candidate pixel edits, driven only by forward queries.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .network import forward_batch, trace
from .tensor import as_pixels

L0 = 0
LINF = math.inf


@dataclass
class AttackConfig:
    """Shared attack parameters.

    ``th`` is the budget: max per-pixel change in [0,1] units for the
    max-norm attack, or the count of editable pixels for the pixel
    attack (where th=0 is accepted and yields an immediate failure).
    """

    p: float = LINF
    th: float = 0.1
    targeted: bool = False
    target: int | None = None
    # PGD
    iterations: int = 40
    step: float | None = None  # defaults to th / 10
    random_start: bool = True
    soft_label_objective: bool = False  # minimize g(x)_C literally instead of CE ascent
    # differential evolution
    population: int = 75
    de_weight: float = 0.5
    de_crossover: float = 0.9
    generations: int = 30
    value_bounds: tuple = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.p not in (L0, LINF):
            raise ValueError("norm must be 0 or inf")
        if self.p == LINF and self.th <= 0:
            raise ValueError("max-norm budget must be positive")
        if self.p == L0 and (self.th < 0 or self.th != int(self.th)):
            raise ValueError("pixel budget must be a non-negative integer")
        if self.targeted and self.target is None:
            raise ValueError("targeted attack needs a target class")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.step is not None and self.step < 0:
            raise ValueError("step size must be non-negative")
        if self.population < 4:
            raise ValueError("DE population must be at least 4 (mutation needs 3 partners)")
        if not (0.0 <= self.de_crossover <= 1.0):
            raise ValueError("crossover rate must lie in [0, 1]")
        if self.value_bounds[0] >= self.value_bounds[1]:
            raise ValueError("value bounds must be an increasing pair")

    @property
    def alpha(self):
        return self.th / 10.0 if self.step is None else self.step


@dataclass
class AdversarialResult:
    """One attack outcome; ``adversarial = original + perturbation``."""

    attack: str
    original: np.ndarray
    adversarial: np.ndarray
    perturbation: np.ndarray
    success: bool
    skipped: bool
    original_class: int
    original_confidence: float
    adversarial_class: int
    adversarial_confidence: float
    achieved_norm: float
    query_count: int
    steps_used: int
    seed: int
    fitness_history: list = field(default_factory=list)

    def support(self):
        """Pixel coordinates (row, col) the perturbation touches."""
        changed = np.any(self.perturbation.reshape(*self.perturbation.shape[:2], -1) != 0, axis=-1)
        return [tuple(rc) for rc in np.argwhere(changed)]


@dataclass
class VerifyOutcome:
    ok: bool
    reason: str | None = None

    def __bool__(self):
        return self.ok


def _l0_norm(eps):
    changed = np.any(eps.reshape(*eps.shape[:2], -1) != 0, axis=-1)
    return int(changed.sum())


def _achieved_norm(eps, p):
    if p == L0:
        return float(_l0_norm(eps))
    return float(np.max(np.abs(eps))) if eps.size else 0.0


def _is_success(pred, original_class, cfg):
    if cfg.targeted:
        return pred == cfg.target
    return pred != original_class


def _result(attack, x, xhat, cfg, c0, conf0, pred, conf, success, skipped,
            queries, steps, trace_=None):
    eps = xhat - x
    return AdversarialResult(
        attack=attack,
        original=x,
        adversarial=xhat,
        perturbation=eps,
        success=success,
        skipped=skipped,
        original_class=c0,
        original_confidence=conf0,
        adversarial_class=pred,
        adversarial_confidence=conf,
        achieved_norm=_achieved_norm(eps, cfg.p),
        query_count=queries,
        steps_used=steps,
        seed=cfg.seed,
        fitness_history=trace_ or [],
    )


def pgd_attack(net, image, cfg, true_label=None):
    """Projected signed-gradient attack under a max-norm budget.

    Ascends the cross-entropy of the attacked class (or descends it for
    the target class when targeted); every iterate stays inside the
    max-norm ball around the original image and inside [0, 1]. Returns
    the first successful iterate, or the final iterate with
    success=False. Images the clean model already misclassifies (when a
    true label is given) come back flagged skipped.
    """
    if cfg.p != LINF:
        raise ValueError("pgd_attack requires the max-norm configuration")
    x = as_pixels(image, dtype=net.dtype)
    probs0 = forward_batch(net, x[None])[0]
    queries = 1
    c0 = int(probs0.argmax())
    conf0 = float(probs0[c0])
    if true_label is not None and c0 != int(true_label):
        return _result("pgd", x, x.copy(), cfg, c0, conf0, c0, conf0,
                       success=False, skipped=True, queries=queries, steps=0)
    if cfg.targeted and cfg.target == c0:
        raise ValueError("target class equals the current prediction")

    rng = np.random.default_rng(cfg.seed)
    lo = np.clip(x - cfg.th, 0.0, 1.0)
    hi = np.clip(x + cfg.th, 0.0, 1.0)
    attacked = cfg.target if cfg.targeted else c0
    # +1 for CE ascent away from the clean class, -1 toward the target
    direction = -1.0 if cfg.targeted else 1.0
    if cfg.soft_label_objective:
        # minimize g(x)_C directly (or maximize g(x)_T): the step flips sign
        direction = -direction

    xhat = x.copy()
    if cfg.random_start:
        xhat = np.clip(x + rng.uniform(-cfg.th, cfg.th, size=x.shape), lo, hi)

    for t in range(cfg.iterations + 1):
        rec = trace(net, xhat)
        probs = rec.output[0]
        queries += 1
        pred = int(probs.argmax())
        if _is_success(pred, c0, cfg):
            return _result("pgd", x, xhat, cfg, c0, conf0, pred, float(probs[pred]),
                           success=True, skipped=False, queries=queries, steps=t)
        if t == cfg.iterations:
            return _result("pgd", x, xhat, cfg, c0, conf0, pred, float(probs[pred]),
                           success=False, skipped=False, queries=queries, steps=t)
        if cfg.soft_label_objective:
            seed = np.zeros_like(rec.output)
            seed[0, attacked] = 1.0
            grads, _ = rec.backward(seed)
        else:
            # d(cross-entropy of `attacked`)/d logits = p - onehot
            dlogits = rec.output.copy()
            dlogits[0, attacked] -= 1.0
            grads, _ = rec.backward(
                dlogits.reshape(rec.nodes[net.logits_node].shape),
                seed_node=net.logits_node,
            )
        xhat = np.clip(xhat + direction * cfg.alpha * np.sign(grads[0][0]), lo, hi)


def _decode(genes, h, w, channels, vlo, vhi):
    """Genome -> image edits. Each pixel tuple is (row, col, values...);
    positions are floor of the continuous gene clipped to the grid."""
    k = genes.shape[0] // (2 + channels)
    tuples = genes.reshape(k, 2 + channels)
    rows = np.clip(np.floor(tuples[:, 0]).astype(int), 0, h - 1)
    cols = np.clip(np.floor(tuples[:, 1]).astype(int), 0, w - 1)
    vals = np.clip(tuples[:, 2:], vlo, vhi)
    return rows, cols, vals


def _apply(x, genes, vlo, vhi):
    h, w, channels = x.shape
    rows, cols, vals = _decode(genes, h, w, channels, vlo, vhi)
    out = x.copy()
    for j in range(len(rows)):  # later tuples overwrite duplicate positions
        out[rows[j], cols[j]] = vals[j]
    return out


def pixel_attack(net, image, cfg, true_label=None):
    """Few-pixel black-box attack via DE/rand/1/bin.

    Candidates are k pixel edits (row, col, per-channel values). Fitness
    is the attacked-class confidence, minimized for untargeted runs and
    maximized toward the target otherwise, using forward queries only.
    Exits early as soon as any evaluated candidate is adversarial.
    """
    if cfg.p != L0:
        raise ValueError("pixel_attack requires the pixel-count configuration")
    x = as_pixels(image, dtype=net.dtype)
    if x.ndim != 3:
        raise ValueError(f"pixel_attack needs an (H, W, C) image, got shape {x.shape}")
    probs0 = forward_batch(net, x[None])[0]
    queries = 1
    c0 = int(probs0.argmax())
    conf0 = float(probs0[c0])
    if true_label is not None and c0 != int(true_label):
        return _result("pixel", x, x.copy(), cfg, c0, conf0, c0, conf0,
                       success=False, skipped=True, queries=queries, steps=0)

    k = int(cfg.th)
    if k == 0:
        return _result("pixel", x, x.copy(), cfg, c0, conf0, c0, conf0,
                       success=False, skipped=False, queries=queries, steps=0)

    h, w, channels = x.shape
    vlo, vhi = cfg.value_bounds
    npop, dim = cfg.population, k * (2 + channels)
    low = np.tile([0.0, 0.0] + [vlo] * channels, k)
    high = np.tile([float(h), float(w)] + [vhi] * channels, k)
    rng = np.random.default_rng(cfg.seed)

    def evaluate(pop):
        imgs = np.stack([_apply(x, g, vlo, vhi) for g in pop])
        return forward_batch(net, imgs)

    def objective(probs):
        if cfg.targeted:
            return -probs[:, cfg.target]
        return probs[:, c0]

    def first_success(probs):
        preds = probs.argmax(axis=1)
        hits = np.flatnonzero((preds == cfg.target) if cfg.targeted
                              else (preds != c0))
        return int(hits[0]) if hits.size else None

    def record_best(batch_fit):
        # best-so-far objective; reported in raw units (confidence)
        nonlocal best_so_far
        best_so_far = min(best_so_far, float(batch_fit.min()))
        best_trace.append(-best_so_far if cfg.targeted else best_so_far)

    def success_result(candidates, probs, i, gen):
        xhat = _apply(x, candidates[i], vlo, vhi)
        pred = int(probs[i].argmax())
        return _result("pixel", x, xhat, cfg, c0, conf0, pred, float(probs[i, pred]),
                       success=True, skipped=False, queries=queries, steps=gen,
                       trace_=best_trace)

    best_trace = []
    best_so_far = math.inf
    pop = low + rng.uniform(size=(npop, dim)) * (high - low)
    pop_probs = evaluate(pop)
    queries += npop
    fit = objective(pop_probs)
    record_best(fit)
    hit = first_success(pop_probs)
    if hit is not None:
        return success_result(pop, pop_probs, hit, gen=0)

    members = np.arange(npop)
    for gen in range(1, cfg.generations + 1):
        trials = np.empty_like(pop)
        for i in range(npop):
            a, b, c = rng.choice(members[members != i], size=3, replace=False)
            mutant = np.clip(pop[a] + cfg.de_weight * (pop[b] - pop[c]), low, high)
            cross = rng.random(dim) < cfg.de_crossover
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        tprobs = evaluate(trials)
        queries += npop
        tfit = objective(tprobs)
        record_best(tfit)
        hit = first_success(tprobs)
        if hit is not None:
            return success_result(trials, tprobs, hit, gen=gen)
        better = tfit <= fit
        pop[better] = trials[better]
        fit[better] = tfit[better]
        pop_probs[better] = tprobs[better]

    i = int(fit.argmin())
    xhat = _apply(x, pop[i], vlo, vhi)
    probs = pop_probs[i]
    pred = int(probs.argmax())
    return _result("pixel", x, xhat, cfg, c0, conf0, pred, float(probs[pred]),
                   success=_is_success(pred, c0, cfg), skipped=False,
                   queries=queries, steps=cfg.generations, trace_=best_trace)


def verify_adversarial(net, result, cfg):
    """Recompute predictions and the norm; true iff the record is
    self-consistent. Returns a truthy/falsy outcome with a reason code
    ("mismatch", "range", "norm", "prediction", "success-flag")."""
    x, xhat, eps = result.original, result.adversarial, result.perturbation
    if x.shape != xhat.shape or eps.shape != x.shape:
        return VerifyOutcome(False, "mismatch")
    if np.max(np.abs(xhat - (x + eps)), initial=0.0) > 1e-12:
        return VerifyOutcome(False, "mismatch")
    if xhat.min() < 0.0 or xhat.max() > 1.0:
        return VerifyOutcome(False, "range")
    if cfg.p == LINF:
        if np.max(np.abs(eps)) > cfg.th + 1e-12:
            return VerifyOutcome(False, "norm")
    else:
        if _l0_norm(eps) > int(cfg.th):
            return VerifyOutcome(False, "norm")

    probs_x = forward_batch(net, x[None])[0]
    probs_hat = forward_batch(net, xhat[None])[0]
    if int(probs_x.argmax()) != result.original_class:
        return VerifyOutcome(False, "prediction")
    if int(probs_hat.argmax()) != result.adversarial_class:
        return VerifyOutcome(False, "prediction")
    if result.skipped:
        if result.success or np.any(eps != 0):
            return VerifyOutcome(False, "success-flag")
        return VerifyOutcome(True)
    fresh = _is_success(int(probs_hat.argmax()), int(probs_x.argmax()), cfg)
    if bool(result.success) != fresh:
        return VerifyOutcome(False, "success-flag")
    return VerifyOutcome(True)
