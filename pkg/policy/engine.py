"""
Featurized linear-softmax autoregressive policy

Feature layout of phi(task, prefix), F = H + V + 3:

    [0, H)              hashed prompt/context features (l2-normalized)
    [H, H + V + 1)      one-hot of the last emitted token, BOS at H + V
    H + V + 1           context-missing flag (task requires evidence it lacks)
    H + V + 2           bias

Logits are weights @ phi / temperature, so every log-likelihood and gradient is
closed-form.
"""
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.feature_extraction import FeatureHasher
from sklearn.utils import murmurhash3_32

from taskforge.records import BOXED_INSTRUCTION, Task

logger = logging.getLogger(__name__)

INIT_SCALE = 0.01
FIXED_COLUMNS = 3  # BOS slot, context-missing flag, bias

_WORD = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class RedundancyConfig:
    """Truncate when a loop of at most window tokens repeats max_repeats times in a row"""

    window: int = 8
    max_repeats: int = 4

    def __post_init__(self):
        if self.window < 1 or self.max_repeats < 2:
            raise ValueError(f"Redundancy window must be >= 1 and max_repeats >= 2, got {self}")


@dataclass
class PolicyParams:
    """Weights of the policy; snapshots are read-only copies"""

    weights: np.ndarray
    frozen_mask: np.ndarray
    version: int = 0
    read_only: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.frozen_mask = np.asarray(self.frozen_mask, dtype=bool)
        if self.weights.ndim != 2 or self.weights.shape != self.frozen_mask.shape:
            raise ValueError(
                f"Weights {self.weights.shape} and frozen mask {self.frozen_mask.shape} must share a 2-D shape"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Policy weights must be finite")
        if self.read_only:
            self.weights.setflags(write=False)
            self.frozen_mask.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def hash_width(self) -> int:
        return self.feature_dim - self.vocab_size - FIXED_COLUMNS

    def column_of_last(self, token_id: Optional[int]) -> int:
        """Column of the last-token one-hot; None means BOS"""
        return self.hash_width + (self.vocab_size if token_id is None else int(token_id))

    @property
    def missing_column(self) -> int:
        return self.hash_width + self.vocab_size + 1

    @property
    def bias_column(self) -> int:
        return self.hash_width + self.vocab_size + 2

    def prompt_columns(self) -> slice:
        return slice(0, self.hash_width)

    def freeze(self, rows=None, cols=None) -> 'PolicyParams':
        """Mark a block of weights frozen (all rows/columns when omitted)"""
        if self.read_only:
            raise ValueError("Cannot freeze entries of a read-only snapshot")
        rows = slice(None) if rows is None else rows
        cols = slice(None) if cols is None else cols
        self.frozen_mask[rows, cols] = True
        return self

    def copy(self) -> 'PolicyParams':
        return PolicyParams(self.weights.copy(), self.frozen_mask.copy(), self.version)


@dataclass(frozen=True)
class Rollout:
    """One sampled response with its log-likelihoods"""

    task_id: str
    tokens: Tuple[int, ...]
    text: str
    logprob_old: float
    logprob_cur: float
    truncated_by_redundancy: bool = False
    temperature: float = 1.0
    policy_version: int = 0
    length: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(int(t) for t in self.tokens))
        object.__setattr__(self, 'length', len(self.tokens))

    def to_payload(self) -> dict:
        return {
            'task_id': self.task_id,
            'tokens': list(self.tokens),
            'text': self.text,
            'logprob_old': self.logprob_old,
            'logprob_cur': self.logprob_cur,
            'truncated_by_redundancy': self.truncated_by_redundancy,
            'temperature': self.temperature,
            'policy_version': self.policy_version,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> 'Rollout':
        return cls(**payload)


def feature_dim_for(vocab_size: int, hash_width: int) -> int:
    return hash_width + vocab_size + FIXED_COLUMNS


def init_policy(vocab_size: int, feature_dim: int, seed: int) -> PolicyParams:
    """
    Draw initial weights uniformly from [-0.01, 0.01]

    Args:
        vocab_size: V, at least 4 (EOS included)
        feature_dim: F, at least V + 4 so the hashed block is non-empty
        seed: Generator seed
    """
    if vocab_size < 4:
        raise ValueError(f"Vocabulary size must be at least 4, got {vocab_size}")
    if feature_dim < vocab_size + FIXED_COLUMNS + 1:
        raise ValueError(
            f"Feature dimension {feature_dim} leaves no hashed block for vocabulary size {vocab_size}"
        )
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(vocab_size, feature_dim))
    return PolicyParams(weights=weights, frozen_mask=np.zeros_like(weights, dtype=bool))


def snapshot(params: PolicyParams) -> PolicyParams:
    """Immutable value copy of the live parameters"""
    return PolicyParams(
        weights=params.weights.copy(),
        frozen_mask=params.frozen_mask.copy(),
        version=params.version,
        read_only=True,
    )


def _prompt_tokens(task: Task) -> List[str]:
    # The boxed instruction is shared by every task and carries no signal
    prompt = task.prompt.replace(BOXED_INSTRUCTION, ' ').casefold()
    words = _WORD.findall(prompt)
    features = [f"w:{w}" for w in words]
    features += [f"b:{a} {b}" for a, b in zip(words, words[1:])]
    features += [f"sig{i}:{' '.join(words)}" for i in range(2)]
    if task.context is not None:
        context_words = _WORD.findall(task.context.casefold())
        features += [f"c:{w}" for w in context_words]
        features += [f"cb:{a} {b}" for a, b in zip(context_words, context_words[1:])]
    return features


@lru_cache(maxsize=65536)
def _hashed_block(task: Task, hash_width: int) -> np.ndarray:
    hasher = FeatureHasher(n_features=hash_width, input_type='string', alternate_sign=False)
    block = np.asarray(hasher.transform([_prompt_tokens(task)]).todense(), dtype=np.float64).ravel()
    norm = np.linalg.norm(block)
    if norm > 0:
        block /= norm
    block.setflags(write=False)
    return block


def featurize(task: Task, prefix: Sequence[int], vocab_size: int, feature_dim: int) -> np.ndarray:
    """
    Feature vector for the next token after prefix

    Args:
        task: Task whose prompt (and context) conditions the policy
        prefix: Tokens emitted so far; empty means BOS
        vocab_size: V of the policy
        feature_dim: F of the policy

    Returns:
        Length-F vector following the module layout
    """
    hash_width = feature_dim - vocab_size - FIXED_COLUMNS
    if hash_width < 1:
        raise ValueError(f"Feature dimension {feature_dim} is too small for vocabulary size {vocab_size}")
    phi = np.zeros(feature_dim, dtype=np.float64)
    phi[:hash_width] = _hashed_block(task, hash_width)
    last = vocab_size if len(prefix) == 0 else int(prefix[-1])
    phi[hash_width + last] = 1.0
    phi[hash_width + vocab_size + 1] = 1.0 if task.is_ablated else 0.0
    phi[hash_width + vocab_size + 2] = 1.0
    return phi


class _StepKernel:
    """Per-(params, task) logits; the prompt part is computed once"""

    def __init__(self, params: PolicyParams, task: Task, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError(f"Temperature must be positive, got {temperature}")
        self.params = params
        self.temperature = temperature
        self.prompt = _hashed_block(task, params.hash_width)
        self.missing = 1.0 if task.is_ablated else 0.0
        weights = params.weights
        self.base = (
            weights[:, params.prompt_columns()] @ self.prompt
            + weights[:, params.missing_column] * self.missing
            + weights[:, params.bias_column]
        )

    def log_probs(self, last: Optional[int]) -> np.ndarray:
        logits = (self.base + self.params.weights[:, self.params.column_of_last(last)]) / self.temperature
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())


def _check_tokens(params: PolicyParams, tokens: Sequence[int]) -> List[int]:
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise ValueError("Token sequence must be non-empty")
    bad = [t for t in tokens if t < 0 or t >= params.vocab_size]
    if bad:
        raise ValueError(f"Tokens {bad} fall outside the vocabulary of size {params.vocab_size}")
    return tokens


def logprob(params: PolicyParams, task: Task, tokens: Sequence[int], temperature: float = 1.0):
    """
    Exact autoregressive log-likelihood

    Returns:
        (total, per_token) with total = per_token.sum()
    """
    tokens = _check_tokens(params, tokens)
    kernel = _StepKernel(params, task, temperature)
    per_token = np.empty(len(tokens), dtype=np.float64)
    last = None
    for step, token in enumerate(tokens):
        per_token[step] = kernel.log_probs(last)[token]
        last = token
    return float(per_token.sum()), per_token


def logprob_and_grad(params: PolicyParams, task: Task, tokens: Sequence[int], temperature: float = 1.0):
    """Log-likelihood and its V x F gradient in one pass"""
    tokens = _check_tokens(params, tokens)
    kernel = _StepKernel(params, task, temperature)
    grad = np.zeros_like(params.weights)
    residual_sum = np.zeros(params.vocab_size, dtype=np.float64)
    per_token = np.empty(len(tokens), dtype=np.float64)

    last = None
    for step, token in enumerate(tokens):
        log_p = kernel.log_probs(last)
        per_token[step] = log_p[token]
        residual = -np.exp(log_p)
        residual[token] += 1.0
        residual_sum += residual
        grad[:, params.column_of_last(last)] += residual
        last = token

    grad[:, params.prompt_columns()] += np.outer(residual_sum, kernel.prompt)
    grad[:, params.missing_column] += residual_sum * kernel.missing
    grad[:, params.bias_column] += residual_sum
    grad /= temperature
    return float(per_token.sum()), grad


def grad_logprob(params: PolicyParams, task: Task, tokens: Sequence[int], temperature: float = 1.0) -> np.ndarray:
    """Gradient of the sequence log-likelihood: sum_t (onehot(y_t) - softmax) outer phi_t"""
    return logprob_and_grad(params, task, tokens, temperature)[1]


def _is_redundant(tokens: Sequence[int], redundancy: RedundancyConfig) -> bool:
    """True when the tail is some unit of 1..window tokens repeated max_repeats times"""
    for period in range(1, redundancy.window + 1):
        span = period * redundancy.max_repeats
        if len(tokens) < span:
            break
        tail = tokens[-span:]
        unit = tail[:period]
        if all(tail[offset:offset + period] == unit for offset in range(period, span, period)):
            return True
    return False


def _rollout(params, task, tokens, per_token, truncated, temperature, detokenize) -> Rollout:
    total = float(np.asarray(per_token, dtype=np.float64).sum())
    return Rollout(
        task_id=task.id,
        tokens=tuple(tokens),
        text=detokenize(tokens) if detokenize else ' '.join(str(t) for t in tokens),
        logprob_old=total,
        logprob_cur=total,
        truncated_by_redundancy=truncated,
        temperature=temperature,
        policy_version=params.version,
    )


def sample(
    params: PolicyParams,
    task: Task,
    max_len: int,
    temperature: float,
    seed: int,
    redundancy: RedundancyConfig = RedundancyConfig(),
    detokenize=None,
    eos_id: int = 0,
) -> Rollout:
    """
    Ancestral sampling until EOS, max_len or a redundancy loop

    Args:
        params: Policy to sample from
        task: Conditioning task
        max_len: Maximum number of emitted tokens (>= 1)
        temperature: Logit temperature (> 0), also used for the stored log-likelihood
        seed: Seed of this rollout's generator
        redundancy: Loop detector settings
        detokenize: Token ids -> text renderer (Vocabulary.detokenize)
        eos_id: Id of the EOS token

    Returns:
        Rollout whose logprob_cur equals logprob() of its tokens at the same temperature
    """
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    kernel = _StepKernel(params, task, temperature)
    rng = np.random.default_rng(seed)

    tokens: List[int] = []
    per_token: List[float] = []
    truncated = False
    last = None
    while len(tokens) < max_len:
        log_p = kernel.log_probs(last)
        cumulative = np.cumsum(np.exp(log_p))
        token = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side='right'))
        token = min(token, params.vocab_size - 1)
        tokens.append(token)
        per_token.append(log_p[token])
        last = token
        if token == eos_id:
            break
        if _is_redundant(tokens, redundancy):
            truncated = True
            break
    return _rollout(params, task, tokens, per_token, truncated, temperature, detokenize)


def decode_greedy(
    params: PolicyParams,
    task: Task,
    max_len: int,
    redundancy: RedundancyConfig = RedundancyConfig(),
    detokenize=None,
    eos_id: int = 0,
) -> Rollout:
    """Argmax decoding (lowest id wins ties) with the same stopping rules as sample"""
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    kernel = _StepKernel(params, task)

    tokens: List[int] = []
    per_token: List[float] = []
    truncated = False
    last = None
    while len(tokens) < max_len:
        log_p = kernel.log_probs(last)
        token = int(np.argmax(log_p))
        tokens.append(token)
        per_token.append(log_p[token])
        last = token
        if token == eos_id:
            break
        if _is_redundant(tokens, redundancy):
            truncated = True
            break
    return _rollout(params, task, tokens, per_token, truncated, 1.0, detokenize)


def derive_seed(base: int, *parts) -> int:
    """
    Seed of one sampling stream from a base seed and a path of ints/strings

    Strings enter through murmurhash3 so the seed depends on ids, never on the
    order in which work is scheduled.
    """
    entropy = [int(base)]
    for part in parts:
        if isinstance(part, str):
            entropy.append(murmurhash3_32(part, seed=0, positive=True))
        else:
            entropy.append(int(part))
    if any(value < 0 for value in entropy):
        raise ValueError(f"Seed parts must be non-negative, got {entropy}")
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
