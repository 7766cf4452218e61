"""Linear softmax policy over environment and retrieval actions.

The action space is `try(s)` for every alphabet symbol, then one `retrieve(code for family f)` per family,
then the generic `retrieve(hints for current goal)`. Logits are `W @ x / temperature`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from recallgym.errors import CheckpointError, ProtocolError
from recallgym.expbase import EntryType
from recallgym.types import Action

if TYPE_CHECKING:
    from collections.abc import Sequence

    from recallgym.env import EnvConfig
    from recallgym.expbase import Entry
    from recallgym.types import History

GENERIC_QUERY = "hints for current goal"
MAX_COUNTED_RETRIEVALS = 3

_HEADER = struct.Struct("<3d")


class ActionSpace:
    """Bijection between action indices and actions."""

    def __init__(self, config: EnvConfig) -> None:
        """Initialize the action space.

        Parameters:
            config: The environment configuration.
        """
        self.config = config
        env_actions = [Action.try_symbol(symbol) for symbol in range(config.alphabet_size)]
        retrievals = [Action.retrieve(self.family_query(family)) for family in range(config.n_families)]
        self.actions: tuple[Action, ...] = (*env_actions, *retrievals, Action.retrieve(GENERIC_QUERY))
        self._indices = {action: index for index, action in enumerate(self.actions)}

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def n_env(self) -> int:
        """Number of environment actions (they come first)."""
        return self.config.alphabet_size

    @property
    def feature_dim(self) -> int:
        """Dimension F of the feature vectors."""
        length, alphabet = self.config.code_length, self.config.alphabet_size
        return (length + 1) + 3 + self.config.n_families + length * (alphabet + 1) + (alphabet + 1) + 1 + 4

    @property
    def offsets(self) -> dict[str, int]:
        """Start index of every feature block."""
        length, alphabet = self.config.code_length, self.config.alphabet_size
        sizes = {
            "cursor": length + 1,
            "feedback": 3,
            "family": self.config.n_families,
            "slots": length * (alphabet + 1),
            "known": alphabet + 1,
            "step": 1,
            "retrievals": MAX_COUNTED_RETRIEVALS + 1,
        }
        offsets, start = {}, 0
        for name, size in sizes.items():
            offsets[name] = start
            start += size
        return offsets

    @staticmethod
    def family_query(family: int) -> str:
        """Query template asking for the code of a family.

        Parameters:
            family: The family.

        Returns:
            The query text.
        """
        return f"code for family {family}"

    def index(self, action: Action) -> int:
        """Index of an action.

        Parameters:
            action: The action.

        Raises:
            ValueError: When the action is not in the space.

        Returns:
            The index.
        """
        try:
            return self._indices[action]
        except KeyError as error:
            raise ValueError(f"Action {action.label} is not in the action space") from error

    def is_retrieval(self, index: int) -> bool:
        """Whether an index denotes a retrieval action.

        Parameters:
            index: The action index.

        Returns:
            True for retrieval actions.
        """
        return index >= self.n_env


def known_prefix(family: int, context: Sequence[Entry]) -> list[int]:
    """Longest known code prefix of a family among retrieved factual entries.

    Parameters:
        family: The goal family.
        context: Retrieved entries.

    Returns:
        The prefix, possibly empty.
    """
    best: list[int] = []
    for entry in context:
        if entry.type_label is EntryType.FACTUAL and entry.content.get("family") == family:
            prefix = [int(symbol) for symbol in entry.content.get("prefix", ())]
            if len(prefix) > len(best):
                best = prefix
    return best


def featurize(space: ActionSpace, history: History, context: Sequence[Entry]) -> np.ndarray:
    """Encode a history and its retrieved context as a feature vector.

    Layout: cursor one-hot (L+1), last feedback (3), goal family (n_families), code slots
    (L blocks of A+1, last index meaning unknown), known symbol at the cursor (A+1), step fraction (1),
    retrieval count clipped to 3 (4).

    Parameters:
        space: The action space.
        history: The decision-time history.
        context: Entries retrieved so far in the episode.

    Returns:
        A vector of shape `(F,)` with coordinates in [0, 1].
    """
    length, alphabet = space.config.code_length, space.config.alphabet_size
    features = np.zeros(space.feature_dim)
    offset = 0

    features[offset + min(history.cursor, length)] = 1.0
    offset += length + 1
    features[offset + history.feedback.index] = 1.0
    offset += 3
    features[offset + history.family] = 1.0
    offset += space.config.n_families

    prefix = known_prefix(history.family, context)[:length]
    for position in range(length):
        symbol = prefix[position] if position < len(prefix) else alphabet
        features[offset + symbol] = 1.0
        offset += alphabet + 1

    at_cursor = prefix[history.cursor] if history.cursor < len(prefix) else alphabet
    features[offset + at_cursor] = 1.0
    offset += alphabet + 1

    features[offset] = min(1.0, history.step / max(history.horizon, 1))
    offset += 1
    features[offset + min(history.n_retrievals, MAX_COUNTED_RETRIEVALS)] = 1.0
    return features


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Weights `(|A|, F)` and temperature. Never mutated in place: updates build new instances."""

    weights: np.ndarray
    n_env: int
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("Temperature must be positive")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Policy weights must be finite")

    @classmethod
    def zeros(cls, space: ActionSpace, temperature: float = 1.0) -> PolicyParams:
        """Uniform policy.

        Parameters:
            space: The action space.
            temperature: Softmax temperature.

        Returns:
            Zero weights.
        """
        return cls(np.zeros((len(space), space.feature_dim)), space.n_env, temperature)

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of the weight matrix."""
        return self.weights.shape  # type: ignore[return-value]

    def replace(self, weights: np.ndarray) -> PolicyParams:
        """Copy with other weights.

        Parameters:
            weights: New weights.

        Returns:
            New parameters.
        """
        return PolicyParams(np.array(weights, dtype=float), self.n_env, self.temperature)

    def save(self, path: str | Path) -> None:
        """Write a checkpoint: header `(|A|, F, temperature)` then row-major weights, little-endian float64.

        Parameters:
            path: Destination file.
        """
        n_actions, n_features = self.shape
        data = _HEADER.pack(n_actions, n_features, self.temperature) + self.weights.astype("<f8").tobytes(order="C")
        Path(path).write_bytes(data)

    @classmethod
    def load(cls, path: str | Path, space: ActionSpace) -> PolicyParams:
        """Read a checkpoint.

        Parameters:
            path: Source file.
            space: The action space the checkpoint must match.

        Raises:
            CheckpointError: When the file is truncated or its shape does not match the space.

        Returns:
            The parameters.
        """
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        n_actions, n_features, temperature = _HEADER.unpack_from(data)
        expected = (len(space), space.feature_dim)
        if (int(n_actions), int(n_features)) != expected:
            raise CheckpointError(f"{path}: shape ({int(n_actions)}, {int(n_features)}) does not match {expected}")
        body = data[_HEADER.size :]
        if len(body) != 8 * expected[0] * expected[1]:
            raise CheckpointError(f"{path}: expected {expected[0] * expected[1]} weights")
        weights = np.frombuffer(body, dtype="<f8").reshape(expected).astype(float)
        return cls(weights, space.n_env, temperature)


def _masked_logits(params: PolicyParams, features: np.ndarray, mask_retrieval: bool) -> np.ndarray:  # noqa: FBT001
    logits = params.weights @ features / params.temperature
    if mask_retrieval:
        logits[params.n_env :] = -np.inf
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    top = np.max(logits, axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ProtocolError("Every action is masked")
    shifted = logits - top
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def action_distribution(params: PolicyParams, features: np.ndarray, mask_retrieval: bool = False) -> np.ndarray:  # noqa: FBT001, FBT002
    """Action probabilities.

    Parameters:
        params: Policy parameters.
        features: Feature vector.
        mask_retrieval: Exclude retrieval actions and renormalize over environment actions.

    Returns:
        Probabilities over the whole action space (zero on masked actions).
    """
    return np.exp(_log_softmax(_masked_logits(params, features, mask_retrieval)))


def log_prob(params: PolicyParams, features: np.ndarray, action: int, mask_retrieval: bool = False) -> float:  # noqa: FBT001, FBT002
    """Log-probability of an action.

    Parameters:
        params: Policy parameters.
        features: Feature vector.
        action: Action index.
        mask_retrieval: Whether retrieval actions are masked.

    Raises:
        ProtocolError: When the action is masked.

    Returns:
        The exact log-softmax value.
    """
    if mask_retrieval and action >= params.n_env:
        raise ProtocolError(f"Action {action} is masked")
    return float(_log_softmax(_masked_logits(params, features, mask_retrieval))[action])


def grad_log_prob(params: PolicyParams, features: np.ndarray, action: int, mask_retrieval: bool = False) -> np.ndarray:  # noqa: FBT001, FBT002
    """Gradient of [`log_prob`][recallgym.policy.log_prob] with respect to the weights.

    It equals `(onehot(action) - pi) ⊗ features / temperature`.

    Parameters:
        params: Policy parameters.
        features: Feature vector.
        action: Action index.
        mask_retrieval: Whether retrieval actions are masked.

    Raises:
        ProtocolError: When the action is masked.

    Returns:
        An array shaped like the weights.
    """
    if mask_retrieval and action >= params.n_env:
        raise ProtocolError(f"Action {action} is masked")
    coefficients = -action_distribution(params, features, mask_retrieval)
    coefficients[action] += 1.0
    return np.outer(coefficients, features) / params.temperature


def sample_action(
    params: PolicyParams,
    features: np.ndarray,
    mask_retrieval: bool,  # noqa: FBT001
    rng: np.random.Generator,
    *,
    greedy: bool = False,
) -> int:
    """Draw an action index.

    Parameters:
        params: Policy parameters.
        features: Feature vector.
        mask_retrieval: Whether retrieval actions are masked.
        rng: Random generator.
        greedy: Take the most likely action (first one on ties) instead of sampling.

    Returns:
        The action index.
    """
    probabilities = action_distribution(params, features, mask_retrieval)
    if greedy:
        return int(np.argmax(probabilities))
    return int(rng.choice(len(probabilities), p=probabilities))


def _batch_log_softmax(params: PolicyParams, features_batch: np.ndarray) -> np.ndarray:
    return _log_softmax(np.atleast_2d(features_batch) @ params.weights.T / params.temperature)


def kl_per_state(params: PolicyParams, ref_params: PolicyParams, features_batch: np.ndarray) -> np.ndarray:
    """Exact KL divergence `KL(pi || pi_ref)` at every state.

    Parameters:
        params: Current parameters.
        ref_params: Reference parameters.
        features_batch: States, shape `(N, F)`.

    Returns:
        Divergences, shape `(N,)`.
    """
    log_p = _batch_log_softmax(params, features_batch)
    log_q = _batch_log_softmax(ref_params, features_batch)
    return np.sum(np.exp(log_p) * (log_p - log_q), axis=1)


def kl_estimate(params: PolicyParams, ref_params: PolicyParams, features_batch: np.ndarray) -> float:
    """Mean exact KL divergence over visited states.

    Parameters:
        params: Current parameters.
        ref_params: Reference parameters.
        features_batch: States, shape `(N, F)`.

    Returns:
        The mean divergence, zero for an empty batch.
    """
    if len(features_batch) == 0:
        return 0.0
    return float(np.mean(kl_per_state(params, ref_params, features_batch)))


def kl_gradient(params: PolicyParams, ref_params: PolicyParams, features_batch: np.ndarray) -> np.ndarray:
    """Gradient of [`kl_estimate`][recallgym.policy.kl_estimate] with respect to the current weights.

    Per state, the derivative with respect to logit `k` is `p_k * (log p_k - log q_k - KL) / temperature`.

    Parameters:
        params: Current parameters.
        ref_params: Reference parameters.
        features_batch: States, shape `(N, F)`.

    Returns:
        An array shaped like the weights.
    """
    if len(features_batch) == 0:
        return np.zeros_like(params.weights)
    features_batch = np.atleast_2d(features_batch)
    log_p = _batch_log_softmax(params, features_batch)
    log_q = _batch_log_softmax(ref_params, features_batch)
    probabilities = np.exp(log_p)
    divergence = log_p - log_q
    kl = np.sum(probabilities * divergence, axis=1, keepdims=True)
    coefficients = probabilities * (divergence - kl) / params.temperature
    return coefficients.T @ features_batch / len(features_batch)


__all__ = [
    "GENERIC_QUERY",
    "ActionSpace",
    "PolicyParams",
    "action_distribution",
    "featurize",
    "grad_log_prob",
    "kl_estimate",
    "kl_gradient",
    "kl_per_state",
    "known_prefix",
    "log_prob",
    "sample_action",
]
