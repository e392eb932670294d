"""Session datasets: parsing, vocabulary indexing, prefix augmentation,
padded batching, and synthetic generators for desk-scale experiments.

Two on-disk formats are supported. The native format is one sample per
line, ``item item ... item | label`` with whitespace-separated tokens. The
adapter format is the two-list pickle used by the public preprocessed
session benchmarks: a pair ``(list_of_prefix_lists, list_of_labels)`` whose
samples are already prefix-augmented.

Datasets are immutable after construction; batch iterators are independent
per caller given separate RNGs.
"""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

RawSample = tuple[list[str], str]


@dataclass(frozen=True)
class Session:
    """One training/evaluation sample: an ordered item prefix and the next
    item actually clicked."""

    items: tuple[int, ...]
    label: int

    def __post_init__(self):
        if len(self.items) < 1:
            raise DataError("session must contain at least one item")

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Dataset:
    sessions: list[Session]
    num_items: int
    split: str = "train"

    def __post_init__(self):
        if not self.sessions:
            raise DataError(f"{self.split} dataset is empty")
        top = max(max(s.items) for s in self.sessions)
        top = max(top, max(s.label for s in self.sessions))
        low = min(min(s.items) for s in self.sessions)
        low = min(low, min(s.label for s in self.sessions))
        if low < 0 or top >= self.num_items:
            raise DataError(
                f"item IDs span [{low}, {top}] but catalog size is {self.num_items}"
            )

    def __len__(self) -> int:
        return len(self.sessions)

    def __iter__(self) -> Iterator[Session]:
        return iter(self.sessions)

    def average_length(self) -> float:
        return float(np.mean([len(s) for s in self.sessions]))


class Vocabulary:
    """Bidirectional mapping between original item tokens and dense internal
    IDs in [0, N). Internal IDs are assigned in first-appearance order, so a
    rebuild from the same input is identical."""

    def __init__(self):
        self._to_internal: dict[str, int] = {}
        self._to_original: list[str] = []

    def __len__(self) -> int:
        return len(self._to_original)

    def add(self, token: str) -> int:
        internal = self._to_internal.get(token)
        if internal is None:
            internal = len(self._to_original)
            self._to_internal[token] = internal
            self._to_original.append(token)
        return internal

    def lookup(self, token: str) -> int:
        try:
            return self._to_internal[token]
        except KeyError:
            raise DataError(f"unknown item token {token!r}") from None

    def original(self, internal: int) -> str:
        if not 0 <= internal < len(self._to_original):
            raise DataError(f"internal ID {internal} outside vocabulary of {len(self)}")
        return self._to_original[internal]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for internal, token in enumerate(self._to_original):
                fh.write(f"{token} {internal}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'original internal'")
                token, internal = parts[0], int(parts[1])
                if internal != len(vocab._to_original):
                    raise DataError(f"{path}:{lineno}: internal IDs must be dense and ordered")
                vocab.add(token)
        return vocab

    def content_hash(self) -> str:
        payload = "\n".join(self._to_original).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


# ---------------------------------------------------------------------------
# parsing and loading
# ---------------------------------------------------------------------------


def parse_native(path) -> list[RawSample]:
    """Parse the native line format into raw (tokens, label) pairs.

    Malformed lines raise with their line number; blank lines are ignored.
    """
    samples: list[RawSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if line.count("|") != 1:
                raise DataError(f"{path}:{lineno}: expected exactly one '|' separator")
            left, right = line.split("|")
            items = left.split()
            label = right.split()
            if not items:
                raise DataError(f"{path}:{lineno}: empty item list")
            if len(label) != 1:
                raise DataError(f"{path}:{lineno}: expected exactly one label token")
            samples.append((items, label[0]))
    if not samples:
        raise DataError(f"{path}: no samples found")
    return samples


def _parse_pickle(path) -> list[RawSample]:
    with open(path, "rb") as fh:
        try:
            payload = pickle.load(fh)
        except Exception as exc:
            raise DataError(f"{path}: not a readable pickle file ({exc})") from exc
    if not (isinstance(payload, (tuple, list)) and len(payload) == 2):
        raise DataError(f"{path}: expected a (sequences, labels) pair")
    sequences, labels = payload
    if len(sequences) != len(labels):
        raise DataError(
            f"{path}: {len(sequences)} sequences but {len(labels)} labels"
        )
    samples: list[RawSample] = []
    for i, (seq, label) in enumerate(zip(sequences, labels)):
        if not isinstance(seq, (list, tuple)) or not seq:
            raise DataError(f"{path}: sample {i} has an empty or malformed prefix")
        samples.append(([str(tok) for tok in seq], str(label)))
    if not samples:
        raise DataError(f"{path}: no samples found")
    return samples


def _sniff_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(2)
    # pickle protocol >= 2 starts with 0x80; the native format is UTF-8 text
    return "pickle" if head[:1] == b"\x80" else "native"


def index_samples(
    raw: Sequence[RawSample],
    vocab: Optional[Vocabulary] = None,
    max_len: Optional[int] = None,
    split: str = "train",
) -> tuple[Dataset, Vocabulary]:
    """Map raw token samples onto dense internal IDs.

    Without a vocabulary one is built in appearance order; with one, unknown
    tokens are an error (evaluation data must live in the training catalog).
    """
    building = vocab is None
    if building:
        vocab = Vocabulary()
    sessions = []
    for items, label in raw:
        if building:
            ids = [vocab.add(tok) for tok in items]
            lab = vocab.add(label)
        else:
            ids = [vocab.lookup(tok) for tok in items]
            lab = vocab.lookup(label)
        if max_len is not None and len(ids) > max_len:
            ids = ids[-max_len:]
        sessions.append(Session(tuple(ids), lab))
    return Dataset(sessions, num_items=len(vocab), split=split), vocab


def load_dataset(
    path,
    format: str = "auto",
    vocab: Optional[Vocabulary] = None,
    max_len: Optional[int] = None,
    split: str = "train",
) -> tuple[Dataset, Vocabulary]:
    """Load a dataset file, returning it along with the vocabulary used.

    ``format`` is ``native``, ``pickle``, or ``auto`` (sniffed from the
    leading bytes; the public preprocessed files are pickles regardless of
    their .txt extension).
    """
    if format == "auto":
        format = _sniff_format(path)
    if format == "native":
        raw = parse_native(path)
    elif format == "pickle":
        raw = _parse_pickle(path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")
    return index_samples(raw, vocab=vocab, max_len=max_len, split=split)


def write_native(path, dataset: Dataset) -> None:
    """Serialize internal IDs in the native line format (tokens are the
    decimal internal IDs)."""
    with open(path, "w", encoding="utf-8") as fh:
        for session in dataset.sessions:
            fh.write(" ".join(str(i) for i in session.items))
            fh.write(f" | {session.label}\n")


def augment_prefixes(
    raw_sessions: Iterable[Sequence[int]],
    num_items: int,
    split: str = "train",
) -> tuple[Dataset, int]:
    """Expand full sessions into (prefix, next-item) samples.

    A session [a, b, c] yields ([a], b) and ([a, b], c). Sessions shorter
    than two items carry no label and are skipped; the count of skipped
    sessions is returned alongside the dataset.
    """
    samples: list[Session] = []
    skipped = 0
    for items in raw_sessions:
        if len(items) < 2:
            skipped += 1
            continue
        items = list(items)
        for cut in range(1, len(items)):
            samples.append(Session(tuple(items[:cut]), items[cut]))
    if not samples:
        raise DataError("prefix augmentation produced no samples")
    return Dataset(samples, num_items=num_items, split=split), skipped


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded session batch. Padding positions carry the sentinel index
    ``num_items`` (outside the catalog) and are False in ``mask``."""

    ids: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    num_items: int

    @property
    def sentinel(self) -> int:
        return self.num_items

    def __len__(self) -> int:
        return self.ids.shape[0]

    @classmethod
    def from_sessions(
        cls,
        sessions: Sequence[Session],
        num_items: int,
        max_len: Optional[int] = None,
    ) -> "Batch":
        if not sessions:
            raise DataError("cannot build a batch from zero sessions")
        trimmed = []
        for s in sessions:
            items = s.items[-max_len:] if max_len is not None and len(s) > max_len else s.items
            trimmed.append((items, s.label))
        width = max(len(items) for items, _ in trimmed)
        n = len(trimmed)
        ids = np.full((n, width), num_items, dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        labels = np.zeros(n, dtype=np.int64)
        for row, (items, label) in enumerate(trimmed):
            if label < 0 or label >= num_items:
                raise DataError(f"label {label} outside catalog of {num_items}")
            ids[row, : len(items)] = items
            lengths[row] = len(items)
            labels[row] = label
        mask = np.arange(width)[None, :] < lengths[:, None]
        return cls(ids=ids, lengths=lengths, mask=mask, labels=labels, num_items=num_items)


def make_batches(
    dataset: Dataset,
    batch_size: int,
    shuffle: bool = False,
    rng: Optional[np.random.Generator] = None,
    max_len: Optional[int] = None,
) -> Iterator[Batch]:
    """Yield padded batches covering every sample exactly once.

    The final partial batch is kept. With ``shuffle`` the order comes from
    ``rng`` and is reproducible under a fixed seed.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise ConfigError("shuffle requires an rng")
        order = rng.permutation(len(dataset))
    else:
        order = np.arange(len(dataset))
    for start in range(0, len(order), batch_size):
        chunk = [dataset.sessions[i] for i in order[start : start + batch_size]]
        yield Batch.from_sessions(chunk, dataset.num_items, max_len=max_len)


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------


@dataclass
class SuccessorRule:
    """Next-item rule: follow a fixed successor permutation with probability
    1 - noise, otherwise draw uniformly from the catalog. The Bayes-optimal
    top-1 accuracy of always predicting the successor is therefore
    (1 - noise) + noise / num_items."""

    successor: np.ndarray
    noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"noise must be in [0, 1], got {self.noise}")

    @property
    def num_items(self) -> int:
        return len(self.successor)

    @classmethod
    def cyclic(cls, num_items: int, noise: float = 0.0, step: int = 1) -> "SuccessorRule":
        return cls(successor=(np.arange(num_items) + step) % num_items, noise=noise)

    @classmethod
    def shuffled(cls, num_items: int, noise: float, rng: np.random.Generator) -> "SuccessorRule":
        return cls(successor=rng.permutation(num_items), noise=noise)

    def next_item(self, item: int, rng: np.random.Generator) -> int:
        if self.noise > 0.0 and rng.random() < self.noise:
            return int(rng.integers(self.num_items))
        return int(self.successor[item])

    def bayes_p_at_1(self) -> float:
        return (1.0 - self.noise) + self.noise / self.num_items


def generate_successor_dataset(
    rule: SuccessorRule,
    n_sessions: int,
    rng: np.random.Generator,
    min_len: int = 2,
    max_len: int = 8,
    split: str = "train",
) -> Dataset:
    """Sessions are noisy walks under ``rule``; the label is one more step
    of the same walk, so achievable accuracy is known by construction."""
    if n_sessions < 1:
        raise ConfigError("need at least one session")
    if min_len < 1 or max_len < min_len:
        raise ConfigError(f"bad session length range [{min_len}, {max_len}]")
    sessions = []
    for _ in range(n_sessions):
        length = int(rng.integers(min_len, max_len + 1))
        item = int(rng.integers(rule.num_items))
        walk = [item]
        for _ in range(length - 1):
            item = rule.next_item(item, rng)
            walk.append(item)
        label = rule.next_item(item, rng)
        sessions.append(Session(tuple(walk), label))
    return Dataset(sessions, num_items=rule.num_items, split=split)


def generate_mixture_dataset(
    n_sessions: int,
    rng: np.random.Generator,
    easy_items: int = 40,
    hard_items: int = 20,
    hard_fraction: float = 0.15,
    easy_noise: float = 0.3,
    min_len: int = 2,
    max_len: int = 8,
    split: str = "train",
) -> Dataset:
    """Hard/easy mixture for loss-weighting studies.

    Easy sessions (the majority) are successor walks over the easy region
    whose labels carry irreducible noise: with probability ``easy_noise``
    the label is uniform over the easy region instead of the successor, so
    their loss cannot fall past a floor. Hard sessions open with an anchor
    item from the hard region followed by uniformly random easy-region
    filler; the label is the anchor's successor, deterministic but only
    predictable through long-range attention to the session start. A loss
    that treats samples alike keeps grinding on the noisy majority, while a
    difficulty-weighted loss shifts gradient to the learnable hard minority
    once easy predictions saturate.
    """
    if easy_items < 2 or hard_items < 2:
        raise ConfigError("each mixture region needs at least two items")
    if not 0.0 < hard_fraction < 1.0:
        raise ConfigError(f"hard_fraction must be in (0, 1), got {hard_fraction}")
    if not 0.0 <= easy_noise <= 1.0:
        raise ConfigError(f"easy_noise must be in [0, 1], got {easy_noise}")
    if min_len < 2 or max_len < min_len:
        raise ConfigError(f"bad session length range [{min_len}, {max_len}]")
    num_items = easy_items + hard_items
    easy_succ = (np.arange(easy_items) + 1) % easy_items
    hard_succ = easy_items + (np.arange(hard_items) + 1) % hard_items
    sessions = []
    for _ in range(n_sessions):
        length = int(rng.integers(min_len, max_len + 1))
        if rng.random() < hard_fraction:
            anchor = int(rng.integers(easy_items, num_items))
            filler = rng.integers(0, easy_items, size=length - 1).tolist()
            walk = [anchor] + [int(f) for f in filler]
            label = int(hard_succ[anchor - easy_items])
        else:
            item = int(rng.integers(easy_items))
            walk = [item]
            for _ in range(length - 1):
                item = int(easy_succ[item])
                walk.append(item)
            if easy_noise > 0.0 and rng.random() < easy_noise:
                label = int(rng.integers(easy_items))
            else:
                label = int(easy_succ[item])
        sessions.append(Session(tuple(walk), label))
    return Dataset(sessions, num_items=num_items, split=split)
