"""Three-class planted-feature model: closed-form robust training theory plus
Monte-Carlo oracles that check every formula against direct simulation.

The data model lives in R^6, written (x_E | x_C).  A sample of class
i in {1, 2, 3} has x_{E,i} ~ N(mu, sigma^2) and x_{C,j} ~ N(mu, sigma^2) for
the two j != i; every other coordinate is exactly zero.  The x_E block
carries class-specific evidence, the x_C block carries evidence shared
between the other two classes (coordinate j of x_C is populated by both
classes other than j).

The hypothesis class is linear with two tied nonnegative weights:

    f_w(x)_i = w1 * x_{E,i} + w2 * (x_{C,j1} + x_{C,j2}),   {j1, j2} = {1,2,3} \\ {i}

Training objective (margin form, l-inf adversary of radius eps, ridge
penalty lam/2 * ||w||^2):

    L(w) = E_i E_x [ max_{|delta|_inf <= eps} ( max_{j != i} f(x+delta)_j
                                                - f(x+delta)_i ) ]
           + lam/2 * (w1^2 + w2^2)

For w >= 0 the inner maximum is attained at an explicit corner of the cube
(:func:`worst_case_delta`), which makes the objective linear in w with
closed-form coefficients.  The label-smoothed variant subtracts
beta/2 * sum_{j != i} f(x+delta)_j at that same delta.  Closed-form minimizers,
the thresholds where the cross-class weight collapses to zero, and pairwise
margin probabilities all follow; each has an MC oracle here that estimates
the same quantity from raw samples without using the formula under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Affine, Classifier
from .numerics import RngStream, std_normal_cdf

__all__ = [
    "CheckRecord",
    "GroupVerification",
    "LinearHypothesis",
    "SyntheticBatch",
    "SyntheticParams",
    "adversarial_batch",
    "eps0",
    "eps1",
    "frozen_linear_coefficients",
    "linear_classifier",
    "linear_logits",
    "ls_loss_closed",
    "ls_loss_mc",
    "ls_optimal_weights",
    "margin_loss",
    "max_gauss_mean_mc",
    "optimal_weights",
    "pair_margin_prob",
    "projected_gd_oracle",
    "replicate_groups",
    "robust_loss_closed",
    "robust_loss_mc",
    "run_verification",
    "sample",
    "worst_case_delta",
]

CLASSES = (1, 2, 3)


@dataclass(frozen=True)
class SyntheticParams:
    """Parameters of the planted three-class model.

    Constraints enforced here: mu > 0, 0 < sigma < sqrt(pi) * mu,
    lam > 0, 0 <= eps < mu / 2, 0 <= beta < 1/3.
    """

    mu: float = 1.0
    sigma: float = math.sqrt(math.pi) / 2.0
    lam: float = 0.1
    eps: float = 0.0
    beta: float = 0.0

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.sigma >= math.sqrt(math.pi) * self.mu:
            raise ValueError(
                f"sigma must be below sqrt(pi)*mu = {math.sqrt(math.pi) * self.mu:.6g}, "
                f"got {self.sigma}"
            )
        if not (0.0 <= self.eps < self.mu / 2.0):
            raise ValueError(f"eps must lie in [0, mu/2) = [0, {self.mu / 2}), got {self.eps}")
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not (0.0 <= self.beta < 1.0 / 3.0):
            raise ValueError(f"beta must lie in [0, 1/3), got {self.beta}")

    @property
    def sigma_term(self) -> float:
        """sigma / sqrt(pi): the mean of the larger of two N(0, sigma^2) draws."""
        return self.sigma / math.sqrt(math.pi)


@dataclass(frozen=True)
class LinearHypothesis:
    """Tied-weight linear scorer: w1 on own-class evidence, w2 on shared."""

    w1: float
    w2: float

    def __post_init__(self) -> None:
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError(f"weights must be non-negative, got ({self.w1}, {self.w2})")


@dataclass
class SyntheticBatch:
    """A batch of samples stored columnwise: x_e, x_c are (n, 3), labels in {1,2,3}."""

    x_e: np.ndarray
    x_c: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def inputs(self) -> np.ndarray:
        """Samples as (n, 6) rows in (x_E | x_C) coordinate order."""
        return np.hstack([self.x_e, self.x_c])


def sample(params: SyntheticParams, class_i: int, n: int, rng: RngStream) -> SyntheticBatch:
    """Draw n samples of one class; off-pattern coordinates are exactly zero."""
    if class_i not in CLASSES:
        raise ValueError(f"class must be one of {CLASSES}, got {class_i}")
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    gen = rng.generator
    x_e = np.zeros((n, 3))
    x_c = np.zeros((n, 3))
    idx = class_i - 1
    x_e[:, idx] = gen.normal(params.mu, params.sigma, size=n)
    for j in range(3):
        if j != idx:
            x_c[:, j] = gen.normal(params.mu, params.sigma, size=n)
    return SyntheticBatch(x_e, x_c, np.full(n, class_i, dtype=np.int64))


def sample_mixed(params: SyntheticParams, n: int, rng: RngStream) -> SyntheticBatch:
    """Draw n samples with uniformly random labels (one stream per class)."""
    labels = rng.split(0).generator.integers(1, 4, size=n)
    x_e = np.zeros((n, 3))
    x_c = np.zeros((n, 3))
    for class_i in CLASSES:
        mask = labels == class_i
        part = sample(params, class_i, int(mask.sum()), rng.split(class_i))
        x_e[mask] = part.x_e
        x_c[mask] = part.x_c
    return SyntheticBatch(x_e, x_c, labels.astype(np.int64))


def linear_logits(hypothesis: LinearHypothesis, x_e: np.ndarray, x_c: np.ndarray) -> np.ndarray:
    """All three logits for a batch, shape (n, 3)."""
    totals = x_c.sum(axis=1, keepdims=True)
    return hypothesis.w1 * x_e + hypothesis.w2 * (totals - x_c)


def linear_classifier(hypothesis: LinearHypothesis) -> Classifier:
    """The same scorer as a bias-free linear Classifier over (x_E | x_C) in R^6."""
    head = np.zeros((3, 6))
    for i in range(3):
        head[i, i] = hypothesis.w1
        for j in range(3):
            if j != i:
                head[i, 3 + j] = hypothesis.w2
    return Classifier(hidden=[], head=Affine(head, None))


def worst_case_delta(params: SyntheticParams, hypothesis: LinearHypothesis | None = None,
                     class_i: int = 1) -> np.ndarray:
    """Margin-maximizing l-inf perturbation for a class-``class_i`` sample.

    In (delta_E | delta_C) order: -eps on the own-class evidence coordinate,
    +eps on the other classes' evidence coordinates, +eps on the shared
    coordinate indexed by the own class, -eps on the other shared
    coordinates.  For class 1: (-eps, eps, eps, eps, -eps, -eps).  Optimal
    for every nonnegative hypothesis, so ``hypothesis`` only documents intent.
    """
    if class_i not in CLASSES:
        raise ValueError(f"class must be one of {CLASSES}, got {class_i}")
    idx = class_i - 1
    delta = np.empty(6)
    delta[:3] = params.eps
    delta[idx] = -params.eps
    delta[3:] = -params.eps
    delta[3 + idx] = params.eps
    return delta


def margin_loss(hypothesis: LinearHypothesis, x_e: np.ndarray, x_c: np.ndarray,
                labels: np.ndarray) -> np.ndarray:
    """Per-sample margin loss max_{j != label} f_j - f_label, shape (n,)."""
    logits = linear_logits(hypothesis, x_e, x_c)
    idx = np.asarray(labels, dtype=np.int64) - 1
    n = len(idx)
    own = logits[np.arange(n), idx]
    masked = logits.copy()
    masked[np.arange(n), idx] = -np.inf
    return masked.max(axis=1) - own


def adversarial_batch(params: SyntheticParams, batch: SyntheticBatch) -> SyntheticBatch:
    """Apply each sample's analytic worst-case perturbation in place of delta search."""
    x_e = batch.x_e.copy()
    x_c = batch.x_c.copy()
    for class_i in CLASSES:
        mask = batch.labels == class_i
        if not mask.any():
            continue
        delta = worst_case_delta(params, class_i=class_i)
        x_e[mask] += delta[:3]
        x_c[mask] += delta[3:]
    return SyntheticBatch(x_e, x_c, batch.labels.copy())


# ---------------------------------------------------------------------------
# Robust loss: Monte-Carlo and closed form
# ---------------------------------------------------------------------------


def robust_margin_samples(params: SyntheticParams, hypothesis: LinearHypothesis,
                          n_samples: int, rng: RngStream) -> np.ndarray:
    """Per-sample worst-case margin losses for uniformly-labeled draws."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be at least 1, got {n_samples}")
    batch = sample_mixed(params, n_samples, rng)
    adv = adversarial_batch(params, batch)
    return margin_loss(hypothesis, adv.x_e, adv.x_c, adv.labels)


def robust_loss_mc(params: SyntheticParams, hypothesis: LinearHypothesis,
                   n_samples: int, rng: RngStream) -> float:
    """MC estimate of the regularized worst-case margin loss."""
    margins = robust_margin_samples(params, hypothesis, n_samples, rng)
    reg = 0.5 * params.lam * (hypothesis.w1 ** 2 + hypothesis.w2 ** 2)
    return float(margins.mean()) + reg


def robust_loss_closed(params: SyntheticParams, hypothesis: LinearHypothesis) -> float:
    """Closed form: (2eps - mu) w1 + (2eps - mu + sigma/sqrt(pi)) w2 + lam/2 ||w||^2."""
    c1 = 2.0 * params.eps - params.mu
    c2 = 2.0 * params.eps - params.mu + params.sigma_term
    reg = 0.5 * params.lam * (hypothesis.w1 ** 2 + hypothesis.w2 ** 2)
    return c1 * hypothesis.w1 + c2 * hypothesis.w2 + reg


def optimal_weights(params: SyntheticParams) -> LinearHypothesis:
    """Minimizer of the closed-form robust loss over w >= 0."""
    w1 = max(0.0, (params.mu - 2.0 * params.eps) / params.lam)
    w2 = max(0.0, (params.mu - 2.0 * params.eps - params.sigma_term) / params.lam)
    return LinearHypothesis(w1, w2)


def eps0(params: SyntheticParams) -> float:
    """Perturbation radius above which the optimal cross-class weight is zero."""
    return 0.5 * (params.mu - params.sigma_term)


# ---------------------------------------------------------------------------
# Label-smoothed loss
# ---------------------------------------------------------------------------


def ls_margin_samples(params: SyntheticParams, hypothesis: LinearHypothesis,
                      n_samples: int, rng: RngStream) -> np.ndarray:
    """Per-sample smoothed objective: (1-beta) * worst-case margin minus
    beta/2 * sum of the off-class logits, both at the margin-maximizing delta."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be at least 1, got {n_samples}")
    batch = sample_mixed(params, n_samples, rng)
    adv = adversarial_batch(params, batch)
    margins = margin_loss(hypothesis, adv.x_e, adv.x_c, adv.labels)
    logits = linear_logits(hypothesis, adv.x_e, adv.x_c)
    idx = adv.labels - 1
    n = len(idx)
    off_sum = logits.sum(axis=1) - logits[np.arange(n), idx]
    return (1.0 - params.beta) * margins - 0.5 * params.beta * off_sum


def ls_loss_mc(params: SyntheticParams, hypothesis: LinearHypothesis,
               n_samples: int, rng: RngStream) -> float:
    """MC estimate of the regularized label-smoothed objective."""
    values = ls_margin_samples(params, hypothesis, n_samples, rng)
    reg = 0.5 * params.lam * (hypothesis.w1 ** 2 + hypothesis.w2 ** 2)
    return float(values.mean()) + reg


def ls_loss_closed(params: SyntheticParams, hypothesis: LinearHypothesis) -> float:
    """Closed form of the label-smoothed objective.

    Linear coefficients (derived by expanding the smoothed objective at the
    worst-case delta; the off-class logits there have means 2*eps*w1 + ... ):

        c1 = (1 - beta) * (2 eps - mu) - beta * eps
        c2 = (1 - beta) * (2 eps + sigma/sqrt(pi)) - mu

    beta = 0 reduces both to the plain robust loss coefficients.
    """
    beta = params.beta
    c1 = (1.0 - beta) * (2.0 * params.eps - params.mu) - beta * params.eps
    c2 = (1.0 - beta) * (2.0 * params.eps + params.sigma_term) - params.mu
    reg = 0.5 * params.lam * (hypothesis.w1 ** 2 + hypothesis.w2 ** 2)
    return c1 * hypothesis.w1 + c2 * hypothesis.w2 + reg


def ls_optimal_weights(params: SyntheticParams) -> LinearHypothesis:
    """Minimizer of the closed-form label-smoothed loss over w >= 0."""
    beta = params.beta
    w1 = max(0.0, ((1.0 - beta) * (params.mu - 2.0 * params.eps) + beta * params.eps)
             / params.lam)
    w2 = max(0.0, (params.mu - (1.0 - beta) * (2.0 * params.eps + params.sigma_term))
             / params.lam)
    return LinearHypothesis(w1, w2)


def eps1(params: SyntheticParams, clamp: bool = False) -> float:
    """Radius where the smoothed objective's cross-class weight collapses.

    Raw formula: (mu / (1 - beta) - sigma/sqrt(pi)) / 2.  For large beta the
    raw value can exceed mu/2 (outside the admissible radius range); with
    ``clamp=True`` the returned threshold is capped at mu/2, meaning the
    cross-class weight stays positive throughout the whole admissible range.
    """
    raw = 0.5 * (params.mu / (1.0 - params.beta) - params.sigma_term)
    if clamp:
        return min(raw, params.mu / 2.0)
    return raw


# ---------------------------------------------------------------------------
# Projected-gradient-descent oracle on a frozen MC sample set
# ---------------------------------------------------------------------------


def frozen_linear_coefficients(params: SyntheticParams, n_samples: int,
                               rng: RngStream, beta: float | None = None) -> np.ndarray:
    """Per-sample (c1, c2) with objective_s = c1 * w1 + c2 * w2, shape (n, 2).

    At the analytic worst-case delta every off-class logit carries the same
    w1 coefficient (eps), so for any w >= 0 the per-sample worst-case margin
    is linear in w with coefficients independent of w; the same holds for the
    smoothed objective.  This lets a frozen sample set define a deterministic
    convex problem for :func:`projected_gd_oracle`.
    """
    use_beta = params.beta if beta is None else beta
    batch = sample_mixed(params, n_samples, rng)
    adv = adversarial_batch(params, batch)
    n = len(adv)
    idx = adv.labels - 1
    rows = np.arange(n)
    own_e = adv.x_e[rows, idx]
    own_c = adv.x_c[rows, idx]
    other_c = adv.x_c.copy()
    other_c[rows, idx] = np.inf
    min_other = other_c.min(axis=1)
    # Margin coefficients: own-class evidence enters with eps - x_E,own; the
    # shared block contributes x_C,own - min over the other shared coords.
    c1 = params.eps - own_e
    c2 = own_c - min_other
    if use_beta:
        # Off-class logits sum to 2*eps*w1 + (sum(x_C) + x_C,own)*w2: coordinate
        # j != own appears in exactly one off-class logit, own in both.
        off_w2 = adv.x_c.sum(axis=1) + own_c
        c1 = (1.0 - use_beta) * c1 - use_beta * params.eps
        c2 = (1.0 - use_beta) * c2 - 0.5 * use_beta * off_w2
    return np.column_stack([c1, c2])


def projected_gd_oracle(coefficients: np.ndarray, lam: float, steps: int = 10_000,
                        step_size: float | None = None,
                        start: tuple[float, float] = (0.0, 0.0)) -> LinearHypothesis:
    """Projected gradient descent on mean(c @ w) + lam/2 ||w||^2 over w >= 0.

    The frozen coefficients make the objective an explicit strongly convex
    quadratic; the iteration is w <- max(0, w - eta * (mean(c) + lam * w))
    with eta = 0.01 / lam unless overridden.
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    mean_c = np.asarray(coefficients, dtype=np.float64).mean(axis=0)
    eta = (0.01 / lam) if step_size is None else step_size
    w = np.asarray(start, dtype=np.float64).copy()
    for _ in range(steps):
        w = np.maximum(0.0, w - eta * (mean_c + lam * w))
    return LinearHypothesis(float(w[0]), float(w[1]))


# ---------------------------------------------------------------------------
# Pairwise margin probability
# ---------------------------------------------------------------------------


def pair_margin_prob(params: SyntheticParams, hypothesis: LinearHypothesis,
                     convention: str = "exact", method: str = "closed",
                     n_samples: int = 1_000_000,
                     rng: RngStream | None = None) -> float:
    """Probability that a class-1 sample's logit beats class 2's under the
    pairwise worst-case perturbation.

    That perturbation shifts x_{E,1} and x_{C,2} by -eps and x_{E,2} and
    x_{C,1} by +eps; the resulting margin is (w1 + w2)(mu - 2 eps) plus
    zero-mean noise.  ``exact`` uses the noise sd implied by the perturbed
    distribution, sigma * sqrt(w1^2 + w2^2); ``paper`` doubles the variance
    of each coordinate difference (noise sd sigma * sqrt(2) * sqrt(...)),
    matching a derivation that treats the perturbed off-class coordinate as
    still stochastic.  The MC method simulates raw samples and arbitrates:
    it matches ``exact``.
    """
    if hypothesis.w1 <= 0:
        raise ValueError(f"pair margin probability requires w1 > 0, got {hypothesis.w1}")
    if convention not in ("exact", "paper"):
        raise ValueError(f"convention must be 'exact' or 'paper', got {convention!r}")
    if method == "closed":
        sd = params.sigma * math.sqrt(hypothesis.w1 ** 2 + hypothesis.w2 ** 2)
        if convention == "paper":
            sd *= math.sqrt(2.0)
        mean = (hypothesis.w1 + hypothesis.w2) * (params.mu - 2.0 * params.eps)
        return std_normal_cdf(mean / sd)
    if method != "mc":
        raise ValueError(f"method must be 'closed' or 'mc', got {method!r}")
    if rng is None:
        raise ValueError("mc method requires an rng stream")
    batch = sample(params, 1, n_samples, rng)
    x_e = batch.x_e.copy()
    x_c = batch.x_c.copy()
    x_e[:, 0] -= params.eps
    x_e[:, 1] += params.eps
    x_c[:, 0] += params.eps
    x_c[:, 1] -= params.eps
    logits = linear_logits(hypothesis, x_e, x_c)
    return float(np.mean(logits[:, 0] > logits[:, 1]))


def max_gauss_mean_mc(n_samples: int, rng: RngStream) -> tuple[float, float]:
    """MC estimate (value, standard error) of E[max(X, Y)], X, Y iid N(0,1).

    The exact value is 1/sqrt(pi)."""
    gen = rng.generator
    draws = np.maximum(gen.normal(size=n_samples), gen.normal(size=n_samples))
    return float(draws.mean()), float(draws.std(ddof=1) / math.sqrt(n_samples))


# ---------------------------------------------------------------------------
# Replicated feature groups
# ---------------------------------------------------------------------------


@dataclass
class GroupVerification:
    """Result of checking that the replicated-group objective decouples."""

    per_group_closed: list[LinearHypothesis]
    joint_oracle: list[LinearHypothesis]
    closed_loss: float
    oracle_loss: float
    max_abs_err: float

    def max_rel_err(self, scale: float) -> float:
        return self.max_abs_err / scale if scale > 0 else self.max_abs_err


def replicate_groups(params_list, k_groups: int | None = None,
                     n_samples: int = 200_000, rng: RngStream | None = None,
                     steps: int = 10_000) -> GroupVerification:
    """Verify the K-group replicated model optimizes group by group.

    The replicated model concatenates K independent copies of the feature
    block, each with its own (w1^k, w2^k) and its own parameters; the
    extended objective is the sum of per-group regularized margin losses, so
    its minimizer should be the per-group closed-form optimum.  The check
    runs joint projected GD over all 2K weights on frozen MC coefficient
    samples and reports the largest deviation from the per-group formulas.
    """
    if isinstance(params_list, SyntheticParams):
        if k_groups is None or k_groups < 1:
            raise ValueError("k_groups must be >= 1 when passing a single params object")
        params_list = [params_list] * k_groups
    params_list = list(params_list)
    if not params_list:
        raise ValueError("need at least one group")
    if rng is None:
        rng = RngStream(0)

    closed = [optimal_weights(p) for p in params_list]
    coeff = [
        frozen_linear_coefficients(p, n_samples, rng.split(k), beta=0.0)
        for k, p in enumerate(params_list)
    ]
    mean_c = np.array([c.mean(axis=0) for c in coeff])  # (K, 2)
    lams = np.array([p.lam for p in params_list])
    eta = 0.01 / lams.max()
    w = np.zeros((len(params_list), 2))
    for _ in range(steps):
        w = np.maximum(0.0, w - eta * (mean_c + lams[:, None] * w))
    joint = [LinearHypothesis(float(a), float(b)) for a, b in w]

    closed_vec = np.array([[h.w1, h.w2] for h in closed])
    closed_loss = float(sum(robust_loss_closed(p, h) for p, h in zip(params_list, closed)))
    oracle_loss = float(
        (mean_c * w).sum() + 0.5 * (lams[:, None] * w ** 2).sum()
    )
    max_abs = float(np.abs(closed_vec - w).max())
    return GroupVerification(closed, joint, closed_loss, oracle_loss, max_abs)


# ---------------------------------------------------------------------------
# Verification report
# ---------------------------------------------------------------------------


@dataclass
class CheckRecord:
    """One verification record: a named claim, the numbers, and the outcome."""

    name: str
    params: dict
    expected: float | None
    observed: float | None
    tolerance: float | None
    status: str  # pass | fail | boundary | info
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "expected": self.expected,
            "observed": self.observed,
            "tolerance": self.tolerance,
            "status": self.status,
            "detail": self.detail,
        }


def _check(name, params, expected, observed, tolerance, detail="") -> CheckRecord:
    ok = abs(observed - expected) <= tolerance
    return CheckRecord(name, params, float(expected), float(observed),
                       float(tolerance), "pass" if ok else "fail", detail)


def run_verification(base: SyntheticParams | None = None, seed: int = 0,
                     mc_samples: int = 200_000,
                     oracle_steps: int = 10_000) -> list[CheckRecord]:
    """Run the full closed-form-versus-oracle check suite.

    Returns one record per check.  A record with status ``boundary`` marks a
    threshold probed exactly at its collapse radius (sign test undefined
    there); ``info`` records document convention choices with numbers but do
    not gate success.
    """
    if base is None:
        base = SyntheticParams()
    root = RngStream(seed)
    records: list[CheckRecord] = []
    base_kwargs = dict(mu=base.mu, sigma=base.sigma, lam=base.lam)
    e0 = eps0(base)

    # E[max of two standard normals] = 1/sqrt(pi).
    value, se = max_gauss_mean_mc(1_000_000, root.split(1))
    records.append(_check(
        "max_gauss_mean", {"n": 1_000_000}, 1.0 / math.sqrt(math.pi), value,
        3.0 * se, "MC mean of max(X, Y) for X, Y iid N(0,1) vs 1/sqrt(pi)"))

    # Cross-class weight collapse threshold: sign(w2*) == sign(eps0 - eps).
    eps_grid = [(k + 1) / 10.0 * (base.mu / 2.0) for k in range(9)]
    for eps_val in eps_grid:
        p = SyntheticParams(eps=eps_val, **base_kwargs)
        w2 = optimal_weights(p).w2
        gap = e0 - eps_val
        if abs(gap) <= 1e-12:
            records.append(CheckRecord(
                "threshold_sign", {"eps": eps_val}, 0.0, w2, None, "boundary",
                "probed exactly at the collapse radius"))
            continue
        ok = (w2 > 0) == (gap > 0)
        records.append(CheckRecord(
            "threshold_sign", {"eps": eps_val}, float(gap > 0), float(w2 > 0),
            None, "pass" if ok else "fail",
            f"w2*={w2:.6g}, collapse radius {e0:.6g}"))

    # Closed-form minimizers vs projected GD on frozen MC samples.
    for eps_val in (0.05, 0.10, 0.15, 0.20, 0.30, 0.40):
        eps_val = eps_val * base.mu
        p = SyntheticParams(eps=eps_val, **base_kwargs)
        best = optimal_weights(p)
        coeff = frozen_linear_coefficients(p, mc_samples, root.split(2))
        got = projected_gd_oracle(coeff, p.lam, steps=oracle_steps)
        scale = base.mu / base.lam
        records.append(_check(
            "oracle_w1", {"eps": eps_val}, best.w1, got.w1, 0.05 * max(best.w1, 1e-12),
            "projected-GD on frozen MC loss vs closed form"))
        if best.w2 > 0.05 * scale:
            records.append(_check(
                "oracle_w2", {"eps": eps_val}, best.w2, got.w2, 0.05 * best.w2,
                "projected-GD on frozen MC loss vs closed form"))
        else:
            ok = got.w2 < 0.02 * scale
            records.append(CheckRecord(
                "oracle_w2_collapsed", {"eps": eps_val}, 0.0, got.w2,
                0.02 * scale, "pass" if ok else "fail",
                "oracle cross-class weight stays near zero past the collapse radius"))

    # Loss values: closed form vs straight MC, random hypothesis grid.
    gen = root.split(3).generator
    for k in range(5):
        eps_val = float(gen.uniform(0.02, 0.48)) * base.mu
        p = SyntheticParams(eps=eps_val, **base_kwargs)
        h = LinearHypothesis(float(gen.uniform(0.0, 2.0)), float(gen.uniform(0.0, 2.0)))
        margins = robust_margin_samples(p, h, mc_samples, root.split(10 + k))
        reg = 0.5 * p.lam * (h.w1 ** 2 + h.w2 ** 2)
        se = float(margins.std(ddof=1) / math.sqrt(len(margins)))
        records.append(_check(
            "loss_mc_vs_closed", {"eps": eps_val, "w1": h.w1, "w2": h.w2},
            robust_loss_closed(p, h), float(margins.mean()) + reg, 3.0 * se + 1e-12,
            "closed-form robust loss vs direct MC"))

    # Smoothed loss: closed form vs MC, and the sign of the w1 coefficient.
    for k, beta in enumerate((0.1, 0.2, 0.3)):
        p = SyntheticParams(eps=0.2 * base.mu, beta=beta, **base_kwargs)
        h = LinearHypothesis(1.0, 0.5)
        values = ls_margin_samples(p, h, mc_samples, root.split(20 + k))
        reg = 0.5 * p.lam * (h.w1 ** 2 + h.w2 ** 2)
        se = float(values.std(ddof=1) / math.sqrt(len(values)))
        records.append(_check(
            "ls_loss_mc_vs_closed", {"beta": beta, "eps": p.eps},
            ls_loss_closed(p, h), float(values.mean()) + reg, 3.0 * se + 1e-12,
            "closed-form smoothed loss vs direct MC"))

    # Document the linear-coefficient convention for the smoothed loss: the
    # implemented c1 = (1-b)(2e-mu) - b*e agrees with MC; the variant that
    # flips the sign of the mu term does not.
    p_conv = SyntheticParams(eps=0.2 * base.mu, beta=0.2, **base_kwargs)
    h_conv = LinearHypothesis(1.0, 0.5)
    values = ls_margin_samples(p_conv, h_conv, mc_samples, root.split(29))
    mc_val = float(values.mean()) + 0.5 * p_conv.lam * (h_conv.w1 ** 2 + h_conv.w2 ** 2)
    implemented = ls_loss_closed(p_conv, h_conv)
    alt = implemented + 2.0 * (1.0 - p_conv.beta) * p_conv.mu * h_conv.w1
    records.append(CheckRecord(
        "ls_w1_coefficient_convention", {"beta": p_conv.beta, "eps": p_conv.eps},
        implemented, mc_val, None, "info",
        f"|implemented - mc| = {abs(implemented - mc_val):.2e}; a sign-flipped "
        f"mu term gives |alt - mc| = {abs(alt - mc_val):.2e}"))

    # Smoothed threshold sits above the one-hot threshold; surplus identity.
    for beta in (0.1, 0.2, 0.3):
        p = SyntheticParams(eps=0.1 * base.mu, beta=beta, **base_kwargs)
        e1 = eps1(p)
        records.append(CheckRecord(
            "ls_threshold_above", {"beta": beta}, e0, e1, None,
            "pass" if e1 > e0 else "fail",
            f"smoothed collapse radius {e1:.6g} vs one-hot {e0:.6g}"
            + (" (exceeds mu/2; clamped for reporting)" if e1 >= base.mu / 2 else "")))
        surplus = beta * (2.0 * p.eps + p.sigma_term) / p.lam
        diff = ls_optimal_weights(p).w2 - optimal_weights(
            SyntheticParams(eps=p.eps, **base_kwargs)).w2
        records.append(_check(
            "ls_w2_surplus_identity", {"beta": beta, "eps": p.eps},
            surplus, diff, 1e-12,
            "smoothed-minus-plain cross-class weight vs beta(2eps+sigma/sqrt(pi))/lam"))

    # Smoothed minimizer vs projected GD on the smoothed frozen MC loss.
    p_ls = SyntheticParams(eps=0.2 * base.mu, beta=0.2, **base_kwargs)
    best_ls = ls_optimal_weights(p_ls)
    coeff = frozen_linear_coefficients(p_ls, mc_samples, root.split(31), beta=p_ls.beta)
    got_ls = projected_gd_oracle(coeff, p_ls.lam, steps=oracle_steps)
    records.append(_check(
        "ls_oracle_w2", {"beta": p_ls.beta, "eps": p_ls.eps}, best_ls.w2, got_ls.w2,
        0.05 * best_ls.w2, "projected-GD on frozen smoothed MC loss"))

    # Analytic worst-case perturbation dominates random search.
    gen = root.split(4).generator
    violations = 0
    for _ in range(100):
        eps_val = float(gen.uniform(0.02, 0.48)) * base.mu
        p = SyntheticParams(eps=eps_val, **base_kwargs)
        h = LinearHypothesis(float(gen.uniform(0.0, 2.0)), float(gen.uniform(0.0, 2.0)))
        class_i = int(gen.integers(1, 4))
        one = sample(p, class_i, 1, RngStream(seed, int(gen.integers(0, 2 ** 32))))
        delta = worst_case_delta(p, class_i=class_i)
        best_val = margin_loss(h, one.x_e + delta[:3], one.x_c + delta[3:], one.labels)[0]
        trial = gen.uniform(-p.eps, p.eps, size=(10_000, 6))
        vals = margin_loss(
            h,
            one.x_e + trial[:, :3],
            one.x_c + trial[:, 3:],
            np.full(10_000, class_i, dtype=np.int64),
        )
        violations += int((vals > best_val + 1e-12).sum())
    records.append(CheckRecord(
        "delta_dominance", {"instances": 100, "trials": 10_000}, 0.0,
        float(violations), 0.0, "pass" if violations == 0 else "fail",
        "random-search perturbations never beat the analytic worst case"))

    # Perturbed-sample distribution: deterministic coords exactly eps,
    # stochastic coords match N(mu - eps, sigma^2) moments.
    p_dist = SyntheticParams(eps=0.2 * base.mu, **base_kwargs)
    batch = sample(p_dist, 1, 200_000, root.split(5))
    adv = adversarial_batch(p_dist, batch)
    det_err = max(
        float(np.abs(adv.x_e[:, 1] - p_dist.eps).max()),
        float(np.abs(adv.x_e[:, 2] - p_dist.eps).max()),
        float(np.abs(adv.x_c[:, 0] - p_dist.eps).max()),
    )
    records.append(_check(
        "adv_distribution_deterministic", {"eps": p_dist.eps}, 0.0, det_err, 1e-12,
        "attacked zero-pattern coordinates sit exactly at eps"))
    stoch = np.concatenate([adv.x_e[:, 0], adv.x_c[:, 1], adv.x_c[:, 2]])
    se_mean = p_dist.sigma / math.sqrt(len(stoch))
    records.append(_check(
        "adv_distribution_mean", {"eps": p_dist.eps}, p_dist.mu - p_dist.eps,
        float(stoch.mean()), 4.0 * se_mean,
        "attacked populated coordinates keep mean mu - eps"))
    var_se = p_dist.sigma ** 2 * math.sqrt(2.0 / (len(stoch) - 1))
    records.append(_check(
        "adv_distribution_var", {"eps": p_dist.eps}, p_dist.sigma ** 2,
        float(stoch.var(ddof=1)), 4.0 * var_se,
        "attacked populated coordinates keep variance sigma^2"))

    # Pairwise margin probability: spot values, monotonicity, MC agreement.
    p_pm = SyntheticParams(mu=1.0, sigma=0.5, lam=base.lam, eps=0.25)
    records.append(_check(
        "pair_margin_spot", {"w": (1, 0)}, std_normal_cdf(1.0),
        pair_margin_prob(p_pm, LinearHypothesis(1.0, 0.0)), 1e-12,
        "single-weight spot value"))
    records.append(_check(
        "pair_margin_spot", {"w": (1, 1)}, std_normal_cdf(math.sqrt(2.0)),
        pair_margin_prob(p_pm, LinearHypothesis(1.0, 1.0)), 1e-12,
        "equal-weight spot value"))
    last = -1.0
    monotone = True
    for t in np.linspace(0.0, 1.0, 11):
        prob = pair_margin_prob(p_pm, LinearHypothesis(1.0, float(t)))
        monotone &= prob >= last - 1e-15
        last = prob
    records.append(CheckRecord(
        "pair_margin_monotone", {"t_grid": "0..1 step 0.1"}, None, None, None,
        "pass" if monotone else "fail",
        "probability nondecreasing in the cross-class weight ratio"))
    mc_n = 1_000_000
    h_pm = LinearHypothesis(1.0, 0.7)
    closed_val = pair_margin_prob(p_pm, h_pm)
    mc_prob = pair_margin_prob(p_pm, h_pm, method="mc", n_samples=mc_n, rng=root.split(6))
    se = math.sqrt(max(closed_val * (1 - closed_val), 1e-12) / mc_n)
    records.append(_check(
        "pair_margin_mc", {"w2": 0.7, "n": mc_n}, closed_val, mc_prob, 3.0 * se,
        "closed form (exact convention) vs MC simulation"))
    paper_val = pair_margin_prob(p_pm, h_pm, convention="paper")
    records.append(CheckRecord(
        "pair_margin_variance_convention", {"w2": 0.7}, closed_val, paper_val, None,
        "info",
        f"exact-convention {closed_val:.6f} (matches MC {mc_prob:.6f}); "
        f"doubled-variance convention gives {paper_val:.6f}"))

    # Replicated groups decouple.
    group_params = [
        SyntheticParams(eps=0.1 * base.mu, **base_kwargs),
        SyntheticParams(eps=0.4 * base.mu, **base_kwargs),
    ]
    gv = replicate_groups(group_params, n_samples=mc_samples, rng=root.split(7),
                          steps=oracle_steps)
    scale = base.mu / base.lam
    records.append(_check(
        "group_decoupling", {"groups": 2, "eps": [p.eps for p in group_params]},
        0.0, gv.max_abs_err, 0.05 * scale,
        "joint projected GD over all group weights vs per-group closed forms"))
    w2_signs_ok = gv.joint_oracle[0].w2 > 0.05 * scale and gv.joint_oracle[1].w2 < 0.02 * scale
    records.append(CheckRecord(
        "group_threshold_split", {"eps": [p.eps for p in group_params]},
        None, None, None, "pass" if w2_signs_ok else "fail",
        "group below the collapse radius keeps w2 > 0; group above collapses"))

    return records
