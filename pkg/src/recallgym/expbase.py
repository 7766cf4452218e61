"""The typed experience base.

Entries live in five stores (factual and episodic memories, success, failure and comparative skills).
A query returns, for every store, the entries with the highest score

    cosine(e(q), e(r)) + lambda_p * p(r)

within that store's quota. The priority term may be capped by `max_priority_bonus`.
Embeddings come from a deterministic hashed bag-of-tokens encoder.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from recallgym.errors import ConfigError

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Mapping

logger = logging.getLogger(__name__)

DEFAULT_DIM = 64
NORM_TOLERANCE = 1e-9

_TOKEN_RE = re.compile(r"\w+")
_ID_RE = re.compile(r"[a-z]+-(\d+)")


class EntryType(enum.Enum):
    """The five entry types."""

    FACTUAL: str = "factual"
    EPISODIC: str = "episodic"
    SUCCESS_SKILL: str = "success_skill"
    FAILURE_SKILL: str = "failure_skill"
    COMPARATIVE_SKILL: str = "comparative_skill"

    def __str__(self):
        return self.value

    @property
    def prefix(self) -> str:
        """Short prefix used in entry ids."""
        return _PREFIXES[self]

    @property
    def is_memory(self) -> bool:
        """Whether this type belongs to the memory group (as opposed to skills)."""
        return self in {EntryType.FACTUAL, EntryType.EPISODIC}

    @classmethod
    def cast(cls, value: str | EntryType) -> EntryType:
        """Cast a value to an actual entry type.

        Parameters:
            value: The value to cast.

        Returns:
            An EntryType enumeration value.
        """
        if isinstance(value, cls):
            return value
        # let potential errors bubble up
        return cls(value)


_PREFIXES = {
    EntryType.FACTUAL: "mf",
    EntryType.EPISODIC: "me",
    EntryType.SUCCESS_SKILL: "sp",
    EntryType.FAILURE_SKILL: "sn",
    EntryType.COMPARATIVE_SKILL: "sd",
}


def tokenize(text: str) -> list[str]:
    """Split text into lowercase word tokens.

    Parameters:
        text: The text.

    Returns:
        The tokens.
    """
    return _TOKEN_RE.findall(text.lower())


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def encode(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Embed text as a unit vector.

    Every token is hashed into one of `dim` buckets and counted, then the counts are L2-normalized.

    Parameters:
        text: Text to embed.
        dim: Embedding dimension.

    Raises:
        ValueError: When the text has no token.

    Returns:
        A unit vector of shape `(dim,)`.
    """
    tokens = tokenize(text)
    if not tokens:
        raise ValueError(f"Cannot encode text without tokens: {text!r}")
    vector = np.zeros(dim)
    for token in tokens:
        vector[_bucket(token, dim)] += 1.0
    return vector / np.linalg.norm(vector)


@dataclass
class Entry:
    """One typed experience record. Only the priority changes after insertion."""

    id: str
    type_label: EntryType
    when_to_use: str
    content: dict[str, Any]
    embedding: np.ndarray = field(repr=False)
    priority: int = 0

    @property
    def key(self) -> tuple[EntryType, str]:
        """Deduplication key."""
        return self.type_label, self.when_to_use

    def to_record(self) -> dict[str, Any]:
        """Serialize the entry, without its embedding.

        Returns:
            A JSON-compatible dictionary.
        """
        return {
            "id": self.id,
            "type_label": self.type_label.value,
            "when_to_use": self.when_to_use,
            "content": self.content,
            "priority": self.priority,
        }


def make_entry(
    type_label: str | EntryType,
    when_to_use: str,
    content: dict[str, Any],
    *,
    dim: int = DEFAULT_DIM,
    priority: int = 0,
    entry_id: str = "",
) -> Entry:
    """Build an entry, embedding its `when_to_use` key.

    Parameters:
        type_label: The entry type.
        when_to_use: The trigger text, also the deduplication key.
        content: Structured payload.
        dim: Embedding dimension.
        priority: Initial priority.
        entry_id: Identifier. Left empty, the base assigns one on insertion.

    Returns:
        The entry.
    """
    return Entry(
        id=entry_id,
        type_label=EntryType.cast(type_label),
        when_to_use=when_to_use,
        content=content,
        embedding=encode(when_to_use, dim),
        priority=priority,
    )


@dataclass(frozen=True)
class Query:
    """A retrieval query."""

    text: str
    embedding: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_text(cls, text: str, dim: int = DEFAULT_DIM) -> Query:
        """Embed a query text.

        Parameters:
            text: The query.
            dim: Embedding dimension.

        Returns:
            The query.
        """
        return cls(text, encode(text, dim))


@dataclass(frozen=True)
class RetrievalBudget:
    """Per-type retrieval quotas. The total budget `K` is their sum."""

    quotas: Mapping[EntryType, int]

    def __post_init__(self) -> None:
        for entry_type, quota in self.quotas.items():
            if quota < 0:
                raise ValueError(f"Quota of {entry_type} must be non-negative, got {quota}")

    @classmethod
    def uniform(cls, per_type: int = 1) -> RetrievalBudget:
        """Give the same quota to every type.

        Parameters:
            per_type: Quota of each type.

        Returns:
            The budget.
        """
        return cls(dict.fromkeys(EntryType, per_type))

    @property
    def K(self) -> int:  # noqa: N802
        """Total budget."""
        return sum(self.quotas.values())

    def quota(self, entry_type: EntryType) -> int:
        """Quota of one type (zero when absent).

        Parameters:
            entry_type: The type.

        Returns:
            The quota.
        """
        return self.quotas.get(entry_type, 0)


@dataclass
class BaseStats:
    """Read-only summary of an experience base."""

    counts: dict[EntryType, int]
    priority_histogram: dict[int, int]

    @property
    def total(self) -> int:
        """Total number of entries."""
        return sum(self.counts.values())

    def as_dict(self) -> dict[str, Any]:
        """Serialize the summary.

        Returns:
            A JSON-compatible dictionary.
        """
        return {
            "counts": {entry_type.value: count for entry_type, count in self.counts.items()},
            "priority_histogram": {str(priority): count for priority, count in sorted(self.priority_histogram.items())},
        }


def _default_quotas() -> dict[str, int]:
    return {entry_type.value: 1 for entry_type in EntryType}


@dataclass(frozen=True)
class ExpBaseConfig:
    """Experience-base block of the run configuration."""

    dim: int = DEFAULT_DIM
    top_k: int = 5
    quotas: dict[str, int] = field(default_factory=_default_quotas)
    """Per-type quotas, keyed by entry type value. Missing types get 0."""
    lambda_p: float = 0.05
    max_priority_bonus: float = 0.1
    """Ceiling of `lambda_p * p(r)` in a score. `inf` leaves priorities unbounded."""
    typed: bool = True
    """False replaces the per-type quotas by a single pooled top-K."""

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError("must be at least 1", "expbase.dim")
        for name, quota in self.quotas.items():
            try:
                EntryType.cast(name)
            except ValueError:
                raise ConfigError("unknown entry type", f"expbase.quotas.{name}") from None
            if quota < 0:
                raise ConfigError("must be non-negative", f"expbase.quotas.{name}")
        if sum(self.quotas.values()) != self.top_k:
            raise ConfigError(f"must equal the sum of quotas ({sum(self.quotas.values())})", "expbase.top_k")
        if self.lambda_p < 0:
            raise ConfigError("must be non-negative", "expbase.lambda_p")
        if not self.max_priority_bonus >= 0:
            raise ConfigError("must be non-negative", "expbase.max_priority_bonus")

    @property
    def budget(self) -> RetrievalBudget:
        """Per-type retrieval budget."""
        return RetrievalBudget({EntryType.cast(name): quota for name, quota in self.quotas.items()})


class ExperienceBase:
    """The five-store experience repository.

    Reads may be shared between rollout workers; inserts and priority bumps
    only happen between batches.
    """

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        """Initialize an empty base.

        Parameters:
            dim: Embedding dimension.
        """
        self.dim = dim
        self.unknown_bumps = 0
        self._stores: dict[EntryType, list[Entry]] = {entry_type: [] for entry_type in EntryType}
        self._by_id: dict[str, Entry] = {}
        self._by_key: dict[tuple[EntryType, str], Entry] = {}
        self._matrices: dict[EntryType, np.ndarray] = {}
        self._counter = 0

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._by_id

    def __iter__(self) -> Iterator[Entry]:
        for entry_type in EntryType:
            yield from self._stores[entry_type]

    def get(self, entry_id: str) -> Entry:
        """Return an entry by id.

        Parameters:
            entry_id: The id.

        Returns:
            The entry.
        """
        return self._by_id[entry_id]

    def find(self, type_label: EntryType, when_to_use: str) -> Entry | None:
        """Return the entry stored under a deduplication key, if any.

        Parameters:
            type_label: The entry type.
            when_to_use: The trigger text.

        Returns:
            The entry or `None`.
        """
        return self._by_key.get((type_label, when_to_use))

    def entries(self, type_label: EntryType) -> list[Entry]:
        """Entries of one type, in insertion order.

        Parameters:
            type_label: The entry type.

        Returns:
            A copy of the store.
        """
        return list(self._stores[type_label])

    def _validate(self, entry: Entry) -> None:
        embedding = np.asarray(entry.embedding, dtype=float)
        if embedding.shape != (self.dim,):
            raise ValueError(f"Embedding of {entry.when_to_use!r} has shape {embedding.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(embedding)) or abs(np.linalg.norm(embedding) - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"Embedding of {entry.when_to_use!r} is not a unit vector")
        if entry.priority < 0:
            raise ValueError(f"Priority of {entry.when_to_use!r} is negative")
        if entry.id and entry.id in self._by_id:
            raise ValueError(f"Entry id {entry.id} is already used")

    def insert(self, entry: Entry) -> bool:
        """Store an entry unless its `(type_label, when_to_use)` key is already present.

        Parameters:
            entry: The entry. An empty id is replaced by a fresh one.

        Raises:
            ValueError: When the entry violates an invariant.

        Returns:
            Whether the entry was stored.
        """
        self._validate(entry)
        if entry.key in self._by_key:
            return False
        self._counter += 1
        if not entry.id:
            entry.id = f"{entry.type_label.prefix}-{self._counter:06d}"
        self._stores[entry.type_label].append(entry)
        self._by_id[entry.id] = entry
        self._by_key[entry.key] = entry
        self._matrices.pop(entry.type_label, None)
        return True

    def replace_content(self, entry_id: str, content: dict[str, Any]) -> None:
        """Replace the payload of an entry, keeping its key and priority.

        Parameters:
            entry_id: The entry id.
            content: The new payload.
        """
        self._by_id[entry_id].content = content

    def _matrix(self, type_label: EntryType) -> np.ndarray:
        if type_label not in self._matrices:
            store = self._stores[type_label]
            self._matrices[type_label] = (
                np.vstack([entry.embedding for entry in store]) if store else np.empty((0, self.dim))
            )
        return self._matrices[type_label]

    def _ranked(
        self,
        store: list[Entry],
        matrix: np.ndarray,
        query: Query,
        lambda_p: float,
        k: int,
        max_bonus: float,
    ) -> list[Entry]:
        if k <= 0 or not store:
            return []
        priorities = np.fromiter((entry.priority for entry in store), dtype=float, count=len(store))
        scores = matrix @ query.embedding + np.minimum(lambda_p * priorities, max_bonus)
        order = np.argsort(-scores, kind="stable")[:k]
        return [store[index] for index in order]

    def score(self, query: Query, entry: Entry, lambda_p: float, *, max_bonus: float = math.inf) -> float:
        """Score one entry against a query.

        Parameters:
            query: The query.
            entry: The entry.
            lambda_p: Priority weight.
            max_bonus: Ceiling of the priority term.

        Returns:
            Cosine similarity plus weighted priority.
        """
        return float(entry.embedding @ query.embedding) + min(lambda_p * entry.priority, max_bonus)

    def retrieve(
        self,
        query: Query,
        budget: RetrievalBudget,
        lambda_p: float,
        *,
        max_bonus: float = math.inf,
    ) -> list[Entry]:
        """Type-balanced top-K retrieval.

        Parameters:
            query: The query.
            budget: Per-type quotas.
            lambda_p: Priority weight.
            max_bonus: Ceiling of the priority term, unbounded by default.

        Returns:
            For every type, up to its quota of best-scoring entries (ties keep insertion order).
        """
        results: list[Entry] = []
        for entry_type in EntryType:
            store = self._stores[entry_type]
            results.extend(
                self._ranked(store, self._matrix(entry_type), query, lambda_p, budget.quota(entry_type), max_bonus),
            )
        return results

    def retrieve_pooled(self, query: Query, k: int, lambda_p: float, *, max_bonus: float = math.inf) -> list[Entry]:
        """Untyped top-K retrieval over every entry, for the monolithic-memory ablation.

        Parameters:
            query: The query.
            k: Number of entries.
            lambda_p: Priority weight.
            max_bonus: Ceiling of the priority term, unbounded by default.

        Returns:
            The `k` best-scoring entries.
        """
        store = list(self)
        matrix = np.vstack([entry.embedding for entry in store]) if store else np.empty((0, self.dim))
        return self._ranked(store, matrix, query, lambda_p, k, max_bonus)

    def search(self, text: str, config: ExpBaseConfig) -> list[Entry]:
        """Embed a query text and retrieve with the configured budget and priority ceiling.

        Parameters:
            text: Query text.
            config: Retrieval settings.

        Returns:
            The retrieved entries.
        """
        query = Query.from_text(text, self.dim)
        if config.typed:
            return self.retrieve(query, config.budget, config.lambda_p, max_bonus=config.max_priority_bonus)
        return self.retrieve_pooled(query, config.top_k, config.lambda_p, max_bonus=config.max_priority_bonus)

    def bump_priority(self, entry_ids: Iterable[str]) -> None:
        """Increment the priority of each listed entry by one.

        Unknown ids are skipped and counted in `unknown_bumps`.

        Parameters:
            entry_ids: Ids to bump. Repeated ids are bumped repeatedly.
        """
        for entry_id in entry_ids:
            entry = self._by_id.get(entry_id)
            if entry is None:
                self.unknown_bumps += 1
                logger.warning("Cannot bump priority of unknown entry %s", entry_id)
                continue
            entry.priority += 1

    def stats(self) -> BaseStats:
        """Summarize the base.

        Returns:
            Per-type counts and the priority histogram.
        """
        return BaseStats(
            counts={entry_type: len(store) for entry_type, store in self._stores.items()},
            priority_histogram=dict(Counter(entry.priority for entry in self)),
        )

    def save(self, path: str | Path) -> None:
        """Write the base as JSON lines, one entry per line.

        Parameters:
            path: Destination file.
        """
        with Path(path).open("w", encoding="utf8") as file:
            for entry in self:
                file.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, dim: int = DEFAULT_DIM) -> ExperienceBase:
        """Read a base written by [`save`][recallgym.expbase.ExperienceBase.save].

        Embeddings are recomputed from the `when_to_use` keys.

        Parameters:
            path: Source file.
            dim: Embedding dimension.

        Returns:
            The base.
        """
        base = cls(dim)
        with Path(path).open(encoding="utf8") as file:
            for line in file:
                if not line.strip():
                    continue
                record = json.loads(line)
                entry = make_entry(
                    record["type_label"],
                    record["when_to_use"],
                    record["content"],
                    dim=dim,
                    priority=record["priority"],
                    entry_id=record["id"],
                )
                base.insert(entry)
        numbers = [int(match.group(1)) for entry in base if (match := _ID_RE.fullmatch(entry.id))]
        base._counter = max(numbers, default=0)
        return base


__all__ = [
    "DEFAULT_DIM",
    "BaseStats",
    "Entry",
    "EntryType",
    "ExpBaseConfig",
    "ExperienceBase",
    "Query",
    "RetrievalBudget",
    "encode",
    "make_entry",
    "tokenize",
]
