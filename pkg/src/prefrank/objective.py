"""Alignment and comparison losses over candidate log-probabilities.

All functions here are pure: they take per-candidate policy scores
(mean token log-probabilities, natural log) plus distance-factor
matrices and return scalars.  Nothing in this module touches model
weights, which keeps the losses directly checkable against closed
forms and reusable by any log-probability provider.

The comparison loss runs M-1 rounds.  In each round one candidate b is
the positive: its reward weight is the product over attributes of the
largest entry in b's row of each single-attribute matrix, and every
other candidate gets a penalty weight drawn from b's row of the fused
matrix, sorted ascending and assigned so that candidates ranked higher
dynamically receive smaller penalties.  Two round schedules are
supported: ``literal`` takes positives from dynamic-rank positions
1..M-1 (the top response is handled by the alignment loss alone) and
``top_anchored`` takes positions 0..M-2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .apdf import ApdfMatrix
from .errors import DegenerateInputError, ValidationError
from .ranking import DynamicRanking

MODE_LITERAL = "literal"
MODE_TOP_ANCHORED = "top_anchored"
COMPARISON_MODES = (MODE_LITERAL, MODE_TOP_ANCHORED)

DEFAULT_ALPHA = 0.05
DEFAULT_DPO_BETA = 0.1


@dataclass(frozen=True)
class ComparisonWeights:
    """Weights for one comparison round: a reward for the positive and a
    penalty per negative candidate."""

    reward: float
    penalties: dict[int, float]

    def __post_init__(self):
        if not math.isfinite(self.reward) or self.reward < 0:
            raise ValidationError(f"reward weight must be finite and >= 0, got {self.reward}")
        for idx, value in self.penalties.items():
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"penalty weight for candidate {idx} must be finite and >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    """Combined loss: total == l_pc + alpha * l_pa, exactly as computed."""

    l_pa: float
    l_pc: float
    alpha: float
    total: float

    def __post_init__(self):
        if self.total != self.l_pc + self.alpha * self.l_pa:
            raise ValidationError("total must equal l_pc + alpha * l_pa")

    def to_dict(self) -> dict:
        return {"l_pa": self.l_pa, "l_pc": self.l_pc, "alpha": self.alpha, "total": self.total}


def _logsumexp(values: np.ndarray) -> float:
    peak = float(np.max(values))
    return peak + math.log(float(np.sum(np.exp(values - peak))))


def validate_policy_scores(pi_s: np.ndarray, size: int | None = None) -> np.ndarray:
    """Check a per-candidate score vector: 1-D, finite, no NaN."""
    pi_s = np.asarray(pi_s, dtype=np.float64)
    if pi_s.ndim != 1:
        raise ValidationError("policy scores must be a 1-D vector")
    if not np.all(np.isfinite(pi_s)):
        raise ValidationError("policy scores contain NaN or infinite entries")
    if size is not None and pi_s.size != size:
        raise ValidationError(f"expected {size} policy scores, got {pi_s.size}")
    return pi_s


def policy_scores_from_logprobs(token_logprobs: list[np.ndarray]) -> np.ndarray:
    """Mean token log-probability per candidate (natural-log units)."""
    return np.array([float(np.mean(np.asarray(lp, dtype=np.float64))) for lp in token_logprobs])


def perceptual_alignment_loss(token_logprobs: np.ndarray) -> float:
    """Mean negative log-likelihood of the top dynamically-ranked response."""
    token_logprobs = np.asarray(token_logprobs, dtype=np.float64)
    if token_logprobs.size == 0:
        raise ValidationError("alignment loss requires at least one token")
    if not np.all(np.isfinite(token_logprobs)):
        raise ValidationError("token log-probabilities contain non-finite entries")
    return float(-np.mean(token_logprobs))


def reward_weight(single_matrices: list[ApdfMatrix], b: int) -> float:
    """Product over attributes of the largest entry in row b."""
    if not single_matrices:
        raise ValidationError("reward weight requires at least one matrix")
    size = single_matrices[0].size
    if not 0 <= b < size:
        raise ValidationError(f"candidate index {b} out of range for pool of {size}")
    weight = 1.0
    for matrix in single_matrices:
        if matrix.size != size:
            raise ValidationError("single-attribute matrices must share one shape")
        weight *= float(matrix.row(b).max())
    return weight


def penalty_weights(multi: ApdfMatrix, d_r: DynamicRanking, b: int) -> dict[int, float]:
    """Ascending-sorted row-b entries assigned to negatives in dynamic order.

    The j-th smallest value goes to the j-th non-b candidate in the
    dynamic ranking, so better-ranked negatives are penalized least.
    The positive's own (diagonal) entry is excluded from the sort.
    """
    size = multi.size
    if len(d_r) != size:
        raise ValidationError("dynamic ranking does not match matrix size")
    if not 0 <= b < size:
        raise ValidationError(f"candidate index {b} out of range for pool of {size}")
    row = multi.row(b)
    values = np.sort(np.delete(row, b))
    negatives = [i for i in d_r.order if i != b]
    return {candidate: float(value) for candidate, value in zip(negatives, values)}


def round_weights(
    single_matrices: list[ApdfMatrix], multi: ApdfMatrix, d_r: DynamicRanking, b: int
) -> ComparisonWeights:
    """Reward and penalty weights for the round whose positive is b."""
    return ComparisonWeights(
        reward=reward_weight(single_matrices, b),
        penalties=penalty_weights(multi, d_r, b),
    )


def comparison_round_positives(d_r: DynamicRanking, mode: str = MODE_LITERAL) -> list[int]:
    """The positive candidate for each of the M-1 comparison rounds."""
    if mode not in COMPARISON_MODES:
        raise ValidationError(f"unknown comparison mode {mode!r}; expected one of {COMPARISON_MODES}")
    if mode == MODE_LITERAL:
        return [d_r.order[m] for m in range(1, len(d_r))]
    return [d_r.order[m] for m in range(0, len(d_r) - 1)]


def _comparison_terms(
    pi_s: np.ndarray,
    d_r: DynamicRanking,
    single_matrices: list[ApdfMatrix],
    multi: ApdfMatrix,
    mode: str,
):
    """Yield (round_index, positive, included_candidates, log_scores) per round.

    ``included_candidates`` lists the positive first, then every negative
    whose penalty weight is strictly positive; zero-weight negatives
    contribute nothing to the denominator and are dropped.
    """
    size = multi.size
    pi_s = validate_policy_scores(pi_s, size)
    if size < 2:
        raise ValidationError("comparison loss requires a pool of at least 2 candidates")
    for m, b in enumerate(comparison_round_positives(d_r, mode)):
        weights = round_weights(single_matrices, multi, d_r, b)
        if weights.reward == 0.0:
            raise DegenerateInputError(
                f"round {m}: reward weight for candidate {b} is zero (all-zero matrix row)"
            )
        included = [b]
        log_scores = [pi_s[b] + math.log(weights.reward)]
        for candidate, penalty in weights.penalties.items():
            if penalty > 0.0:
                included.append(candidate)
                log_scores.append(pi_s[candidate] + math.log(penalty))
        yield m, b, included, np.array(log_scores)


def perceptual_comparison_loss(
    pi_s: np.ndarray,
    d_r: DynamicRanking,
    single_matrices: list[ApdfMatrix],
    multi: ApdfMatrix,
    mode: str = MODE_LITERAL,
) -> float:
    """Weighted list-wise softmax loss over M-1 rounds; >= 0 and finite."""
    loss = 0.0
    for _, _, _, log_scores in _comparison_terms(pi_s, d_r, single_matrices, multi, mode):
        loss += _logsumexp(log_scores) - float(log_scores[0])
    return loss


def comparison_loss_and_score_grad(
    pi_s: np.ndarray,
    d_r: DynamicRanking,
    single_matrices: list[ApdfMatrix],
    multi: ApdfMatrix,
    mode: str = MODE_LITERAL,
) -> tuple[float, np.ndarray]:
    """Comparison loss plus its gradient with respect to the score vector."""
    pi_s = np.asarray(pi_s, dtype=np.float64)
    grad = np.zeros_like(pi_s)
    loss = 0.0
    for _, b, included, log_scores in _comparison_terms(
        pi_s, d_r, single_matrices, multi, mode
    ):
        lse = _logsumexp(log_scores)
        loss += lse - float(log_scores[0])
        probs = np.exp(log_scores - lse)
        for candidate, p in zip(included, probs):
            grad[candidate] += p
        grad[b] -= 1.0
    return loss, grad


def total_loss(l_pc: float, l_pa: float, alpha: float = DEFAULT_ALPHA) -> LossBreakdown:
    """Combine the two objectives: total = l_pc + alpha * l_pa."""
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    return LossBreakdown(l_pa=l_pa, l_pc=l_pc, alpha=alpha, total=l_pc + alpha * l_pa)


def dpo_pair_loss(
    pi_theta_w: float,
    pi_theta_l: float,
    pi_ref_w: float,
    pi_ref_l: float,
    beta: float = DEFAULT_DPO_BETA,
) -> float:
    """Pairwise Bradley-Terry preference loss on sequence log-probabilities."""
    if beta <= 0:
        raise ValidationError(f"beta must be > 0, got {beta}")
    for value in (pi_theta_w, pi_theta_l, pi_ref_w, pi_ref_l):
        if not math.isfinite(value):
            raise ValidationError("log-probability inputs must be finite")
    margin = beta * ((pi_theta_w - pi_ref_w) - (pi_theta_l - pi_ref_l))
    # -log(sigmoid(margin)) == softplus(-margin), computed stably.
    return float(np.logaddexp(0.0, -margin))


def plackett_luce_loss(
    pi_theta: np.ndarray,
    pi_ref: np.ndarray,
    ranking: list[int],
    beta: float = DEFAULT_DPO_BETA,
) -> float:
    """Negative log-likelihood of a full ranking under the listwise model.

    Rewards are beta * (pi_theta - pi_ref); the preferred candidate comes
    first in ``ranking``.  For M == 2 this reduces exactly to
    :func:`dpo_pair_loss`.
    """
    if beta <= 0:
        raise ValidationError(f"beta must be > 0, got {beta}")
    pi_theta = np.asarray(pi_theta, dtype=np.float64)
    pi_ref = np.asarray(pi_ref, dtype=np.float64)
    if pi_theta.shape != pi_ref.shape:
        raise ValidationError(
            f"length mismatch: {pi_theta.size} policy scores vs {pi_ref.size} reference scores"
        )
    size = pi_theta.size
    if size < 2:
        raise ValidationError("listwise loss requires at least 2 candidates")
    if sorted(ranking) != list(range(size)):
        raise ValidationError("ranking must be a permutation of 0..M-1")
    if not (np.all(np.isfinite(pi_theta)) and np.all(np.isfinite(pi_ref))):
        raise ValidationError("log-probability inputs must be finite")
    rewards = beta * (pi_theta - pi_ref)
    ordered = rewards[np.asarray(ranking, dtype=np.int64)]
    loss = 0.0
    for m in range(size - 1):
        loss += _logsumexp(ordered[m:]) - float(ordered[m])
    return loss
