"""Token log-probability providers.

Two providers feed the objectives: a file-backed table for scores
precomputed by any external model, and a byte-level bigram softmax
language model small enough to train at desk scale with exact analytic
gradients.  The toy model conditions on the question through a fixed
hashed bias on the logits; it is a numerical test vehicle, not a
language model in any linguistic sense.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import objective
from .corpus import QARecord
from .errors import DegenerateInputError, SchemaError, ValidationError
from .pipeline import PerceptionBundle, PreparedRecord

VOCAB = 256
BOS = VOCAB  # context index for the first response byte
CONTEXTS = VOCAB + 1

_CHECKPOINT_MAGIC = b"PRNKPOL1"
_CHECKPOINT_VERSION = 1

DEFAULT_LEARNING_RATE = 0.5
DEFAULT_QUESTION_SCALE = 0.1


class LogProbTable:
    """Per-(record, candidate) token log-probabilities, natural-log units."""

    def __init__(self, entries: dict[tuple[str, str], np.ndarray]):
        self.entries: dict[tuple[str, str], np.ndarray] = {}
        for key, logprobs in entries.items():
            self.entries[key] = _validate_logprobs(np.asarray(logprobs, dtype=np.float64), key)

    def __len__(self) -> int:
        return len(self.entries)

    def tokens_for(self, record_id: str, candidate_id: str) -> np.ndarray:
        key = (record_id, candidate_id)
        if key not in self.entries:
            raise ValidationError(f"no log-probabilities for record {record_id!r} candidate {candidate_id!r}")
        return self.entries[key]

    def scores_for(self, record: QARecord) -> np.ndarray:
        """Mean token log-probability per candidate, in pool order."""
        return objective.policy_scores_from_logprobs(
            [self.tokens_for(record.question_id, c.id) for c in record.candidates]
        )

    @classmethod
    def from_policy(cls, policy: "ToyPolicy", records: list[QARecord]) -> "LogProbTable":
        entries = {}
        for record in records:
            for candidate in record.candidates:
                entries[(record.question_id, candidate.id)] = score(
                    policy, record.question_text, candidate.content
                )
        return cls(entries)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for (record_id, candidate_id), logprobs in self.entries.items():
                handle.write(
                    json.dumps(
                        {
                            "record_id": record_id,
                            "candidate_id": candidate_id,
                            "logprobs": [float(v) for v in logprobs],
                        }
                    )
                    + "\n"
                )


def _validate_logprobs(logprobs: np.ndarray, key) -> np.ndarray:
    if logprobs.ndim != 1 or logprobs.size == 0:
        raise ValidationError(f"{key}: logprob vector must be non-empty and 1-D")
    if not np.all(np.isfinite(logprobs)):
        raise ValidationError(f"{key}: logprobs must be finite")
    if np.any(logprobs > 0):
        raise ValidationError(f"{key}: logprobs must be <= 0")
    return logprobs


def load_logprob_file(path) -> LogProbTable:
    """Read the JSON-Lines logprob format; problems name the line."""
    entries: dict[tuple[str, str], np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                key = (str(payload["record_id"]), str(payload["candidate_id"]))
                logprobs = np.asarray(payload["logprobs"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad logprob entry: {exc}", line=lineno) from exc
            if key in entries:
                raise SchemaError(f"duplicate entry for {key}", line=lineno)
            try:
                entries[key] = _validate_logprobs(logprobs, key)
            except ValidationError as exc:
                raise SchemaError(str(exc), line=lineno) from exc
    return LogProbTable(entries)


def question_bias(question: str, scale: float) -> np.ndarray:
    """Fixed per-question logit bias from a hash of the question text.

    Deterministic and non-trainable; empty questions get a zero bias.
    """
    if scale == 0.0 or not question:
        return np.zeros(VOCAB)
    digest = hashlib.blake2b(question.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    return scale * rng.standard_normal(VOCAB)


@dataclass
class ToyPolicy:
    """Byte-level bigram softmax LM with a question-conditioned logit bias.

    ``weights[c, v]`` is the logit for next byte v given previous byte c
    (row BOS for the first byte).  Only ``weights`` is trainable.
    """

    weights: np.ndarray
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0
    question_scale: float = DEFAULT_QUESTION_SCALE

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (CONTEXTS, VOCAB):
            raise ValidationError(
                f"weights must have shape {(CONTEXTS, VOCAB)}, got {self.weights.shape}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("weights must be finite")

    @classmethod
    def fresh(
        cls,
        seed: int = 0,
        init_scale: float = 1e-3,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        question_scale: float = DEFAULT_QUESTION_SCALE,
    ) -> "ToyPolicy":
        """New policy with small seeded-noise weights (uniform if init_scale=0)."""
        rng = np.random.default_rng(seed)
        weights = init_scale * rng.standard_normal((CONTEXTS, VOCAB))
        return cls(
            weights=weights,
            learning_rate=learning_rate,
            seed=seed,
            question_scale=question_scale,
        )

    def save(self, path) -> None:
        header = struct.pack(
            "<8sIIIqdd",
            _CHECKPOINT_MAGIC,
            _CHECKPOINT_VERSION,
            CONTEXTS,
            VOCAB,
            self.seed,
            self.learning_rate,
            self.question_scale,
        )
        with open(path, "wb") as handle:
            handle.write(header)
            handle.write(self.weights.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ToyPolicy":
        with open(path, "rb") as handle:
            raw = handle.read()
        header_size = struct.calcsize("<8sIIIqdd")
        if len(raw) < header_size:
            raise SchemaError(f"{path}: truncated policy checkpoint")
        magic, version, contexts, vocab, seed, learning_rate, question_scale = struct.unpack(
            "<8sIIIqdd", raw[:header_size]
        )
        if magic != _CHECKPOINT_MAGIC:
            raise SchemaError(f"{path}: not a policy checkpoint (bad magic)")
        if version != _CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {version}")
        if (contexts, vocab) != (CONTEXTS, VOCAB):
            raise SchemaError(f"{path}: unexpected dimensions {contexts}x{vocab}")
        expected = header_size + contexts * vocab * 8
        if len(raw) != expected:
            raise SchemaError(f"{path}: checkpoint size {len(raw)} != expected {expected}")
        weights = np.frombuffer(raw[header_size:], dtype="<f8").reshape(contexts, vocab).copy()
        return cls(
            weights=weights,
            learning_rate=learning_rate,
            seed=seed,
            question_scale=question_scale,
        )


def _response_arrays(response: str) -> tuple[np.ndarray, np.ndarray]:
    data = response.encode("utf-8")
    if not data:
        raise ValidationError("response must be non-empty")
    tokens = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    contexts = np.concatenate(([BOS], tokens[:-1]))
    return contexts, tokens


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def score(policy: ToyPolicy, question: str, response: str) -> np.ndarray:
    """Token log-probabilities of the response under the policy.

    Autoregressive over bytes: entry k depends only on the question and
    bytes before k.
    """
    contexts, tokens = _response_arrays(response)
    logits = policy.weights[contexts] + question_bias(question, policy.question_scale)
    log_probs = _log_softmax(logits)
    return log_probs[np.arange(tokens.size), tokens]


def record_scores(policy: ToyPolicy, record: QARecord) -> np.ndarray:
    """Mean token log-probability per candidate, in pool order."""
    return objective.policy_scores_from_logprobs(
        [score(policy, record.question_text, c.content) for c in record.candidates]
    )


def record_loss(
    policy: ToyPolicy,
    record: QARecord,
    perception: PerceptionBundle,
    alpha: float = objective.DEFAULT_ALPHA,
    mode: str = objective.MODE_LITERAL,
) -> objective.LossBreakdown:
    """Combined loss of one record under the policy."""
    pi_s = record_scores(policy, record)
    top = perception.dynamic.top()
    l_pa = float(-pi_s[top])
    l_pc = objective.perceptual_comparison_loss(
        pi_s, perception.dynamic, perception.singles, perception.multi, mode
    )
    return objective.total_loss(l_pc, l_pa, alpha)


def loss_gradient(
    policy: ToyPolicy,
    record: QARecord,
    perception: PerceptionBundle,
    alpha: float = objective.DEFAULT_ALPHA,
    mode: str = objective.MODE_LITERAL,
) -> tuple[objective.LossBreakdown, np.ndarray]:
    """Loss and its exact gradient with respect to the policy weights."""
    qbias = question_bias(record.question_text, policy.question_scale)
    per_candidate = []
    pi_list = []
    for candidate in record.candidates:
        contexts, tokens = _response_arrays(candidate.content)
        logits = policy.weights[contexts] + qbias
        log_probs = _log_softmax(logits)
        token_logprobs = log_probs[np.arange(tokens.size), tokens]
        per_candidate.append((contexts, tokens, np.exp(log_probs)))
        pi_list.append(float(token_logprobs.mean()))
    pi_s = np.array(pi_list)

    top = perception.dynamic.top()
    l_pa = float(-pi_s[top])
    l_pc, d_pi = objective.comparison_loss_and_score_grad(
        pi_s, perception.dynamic, perception.singles, perception.multi, mode
    )
    d_pi = d_pi.copy()
    d_pi[top] -= alpha
    breakdown = objective.total_loss(l_pc, l_pa, alpha)

    grad = np.zeros_like(policy.weights)
    for coeff, (contexts, tokens, probs) in zip(d_pi, per_candidate):
        if coeff == 0.0:
            continue
        # d(pi)/d(logits) = (onehot - probs) / t, and dL/dW accumulates
        # coeff * that over the rows each context touches.
        delta = probs.copy()
        delta[np.arange(tokens.size), tokens] -= 1.0
        np.add.at(grad, contexts, (-coeff / tokens.size) * delta)
    return breakdown, grad


@dataclass
class TrainResult:
    """Final policy and the per-step loss trace (one entry per record update)."""

    policy: ToyPolicy
    trace: list[objective.LossBreakdown] = field(default_factory=list)

    @property
    def totals(self) -> np.ndarray:
        return np.array([b.total for b in self.trace])


def train(
    policy: ToyPolicy,
    prepared: list[PreparedRecord],
    epochs: int = 1,
    alpha: float = objective.DEFAULT_ALPHA,
    mode: str = objective.MODE_LITERAL,
) -> TrainResult:
    """Plain gradient descent over records in id order, mutating the policy.

    Deterministic: records are visited sorted by question id, every
    epoch, with no shuffling, so a fixed seed reproduces bit-identical
    weights.  A non-finite loss aborts with the failing step number.
    """
    if not prepared:
        raise ValidationError("training requires at least one record")
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    ordered = sorted(prepared, key=lambda p: p.record.question_id)
    result = TrainResult(policy=policy)
    step = 0
    for _ in range(epochs):
        for item in ordered:
            breakdown, grad = loss_gradient(policy, item.record, item.perception, alpha, mode)
            if not np.isfinite(breakdown.total):
                raise DegenerateInputError(f"non-finite loss at step {step}")
            result.trace.append(breakdown)
            policy.weights -= policy.learning_rate * grad
            step += 1
    return result
