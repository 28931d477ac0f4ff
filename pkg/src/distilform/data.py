"""Text preprocessing, vocabulary, TSV loading, and synthetic task generators.

Normalization is deliberately blunt: lowercase, delete ASCII punctuation
(apostrophes included, so contractions collapse: "don't" -> "dont"), split on
whitespace.  Encoded examples are CLS-prefixed, UNK-substituted, truncated and
PAD-filled to a fixed length, with a boolean mask marking real positions.
"""

from __future__ import annotations

import logging
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, SchemaError

logger = logging.getLogger(__name__)

PAD_ID, UNK_ID, CLS_ID, MASK_ID = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, MASK_TOKEN = "<pad>", "<unk>", "<cls>", "<mask>"
SEP_TOKEN = "<sep>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, MASK_TOKEN)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(raw: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace runs."""
    return raw.lower().translate(_PUNCT_TABLE).split()


@dataclass
class Vocab:
    """Injective token -> id mapping with fixed reserved ids 0..3."""

    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_frequency: int = 1

    def __post_init__(self) -> None:
        for tok, want in zip(RESERVED_TOKENS, range(4)):
            if self.token_to_id.get(tok) != want:
                raise ContractError(f"reserved token {tok!r} must have id {want}")
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("vocab mapping is not injective")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def _vocab_from_ordered(tokens: list[str], min_frequency: int = 1) -> Vocab:
    id_to_token = list(RESERVED_TOKENS) + tokens
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    if len(token_to_id) != len(id_to_token):
        raise ContractError("duplicate tokens while building vocabulary")
    return Vocab(token_to_id, id_to_token, min_frequency)


def build_vocab(corpus, min_freq: int = 1, extra_reserved: tuple[str, ...] = ()) -> Vocab:
    """Frequency-ordered vocabulary over token lists.

    Tokens seen at least ``min_freq`` times get ids after the reserved block,
    ordered by descending frequency with lexicographic tie-break.
    """
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_freq and tok not in RESERVED_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )
    return _vocab_from_ordered(list(extra_reserved) + kept, min_freq)


@dataclass(eq=False)
class Example:
    """One fixed-length encoded classification example."""

    example_id: int
    token_ids: np.ndarray  # int64, length max_seq_len, position 0 is CLS
    mask: np.ndarray  # bool, True on CLS and content positions
    label: int


@dataclass(eq=False)
class LoadStats:
    duplicates_removed: int = 0
    rows_dropped: int = 0


@dataclass(eq=False)
class Dataset:
    """Ordered encoded examples sharing one vocabulary, length, and class space."""

    examples: list[Example]
    num_classes: int
    split: str
    provenance: str
    vocab: Vocab
    max_seq_len: int
    load_stats: LoadStats | None = None
    _ids: np.ndarray | None = field(default=None, repr=False)
    _mask: np.ndarray | None = field(default=None, repr=False)
    _labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for ex in self.examples:
            if ex.example_id in seen:
                raise ContractError(f"duplicate example id {ex.example_id}")
            seen.add(ex.example_id)
            if len(ex.token_ids) != self.max_seq_len or len(ex.mask) != self.max_seq_len:
                raise ContractError(
                    f"example {ex.example_id} length differs from max_seq_len {self.max_seq_len}"
                )
            if ex.token_ids[0] != CLS_ID or not ex.mask[0]:
                raise ContractError(f"example {ex.example_id} does not start with CLS")
            if not (0 <= ex.label < self.num_classes):
                raise ContractError(
                    f"example {ex.example_id} label {ex.label} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.examples)

    def example_ids(self) -> list[int]:
        return [ex.example_id for ex in self.examples]

    def _stack(self) -> None:
        if self._ids is None:
            self._ids = np.stack([ex.token_ids for ex in self.examples])
            self._mask = np.stack([ex.mask for ex in self.examples])
            self._labels = np.asarray([ex.label for ex in self.examples], dtype=np.int64)

    def arrays(self, index=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(token_ids, mask, labels) matrices, optionally row-indexed."""
        self._stack()
        if index is None:
            return self._ids, self._mask, self._labels
        index = np.asarray(index)
        return self._ids[index], self._mask[index], self._labels[index]


def encode_example(
    tokens: list[str],
    label: int,
    vocab: Vocab,
    max_seq_len: int,
    example_id: int = 0,
) -> Example:
    """CLS-prefix, UNK-substitute, truncate to max_seq_len - 1 content tokens, PAD-fill."""
    if max_seq_len < 2:
        raise ConfigError(f"max_seq_len must be >= 2, got {max_seq_len}")
    if not isinstance(label, (int, np.integer)) or label < 0:
        raise ContractError(f"label must be a nonnegative integer, got {label!r}")
    content = [vocab.encode_token(t) for t in tokens[: max_seq_len - 1]]
    ids = np.full(max_seq_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1 : 1 + len(content)] = content
    mask = np.zeros(max_seq_len, dtype=bool)
    mask[: 1 + len(content)] = True
    return Example(example_id=example_id, token_ids=ids, mask=mask, label=int(label))


@dataclass
class TsvSchema:
    """Column layout of a tab-separated classification file."""

    sentence_cols: list[str]
    label_col: str
    bins: int | None = None  # bin numeric labels into this many classes


def load_tsv(
    path,
    schema: TsvSchema,
    vocab: Vocab | None = None,
    max_seq_len: int = 32,
    min_freq: int = 1,
    split: str = "train",
) -> Dataset:
    """Parse a header-first TSV file into an encoded Dataset.

    Exact-duplicate rows are removed (first kept), rows with missing fields are
    dropped with a counted warning, sentence pairs are joined with a reserved
    separator token, and labels map to contiguous ints in first-seen order
    (or equal-width bins when ``schema.bins`` is set).  When ``vocab`` is None
    a vocabulary is built from this file's tokens.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError(f"{path}: empty file, no header row")
    header = lines[0].split("\t")
    col_index: dict[str, int] = {}
    for col in schema.sentence_cols + [schema.label_col]:
        if col not in header:
            raise SchemaError(f"{path}: column {col!r} not in header {header}")
        col_index[col] = header.index(col)

    stats = LoadStats()
    seen_rows: set[str] = set()
    rows: list[tuple[list[str], str]] = []
    pair = len(schema.sentence_cols) > 1
    for line in lines[1:]:
        if line in seen_rows:
            stats.duplicates_removed += 1
            continue
        seen_rows.add(line)
        fields = line.split("\t")
        needed = max(col_index.values())
        if len(fields) <= needed or any(fields[col_index[c]] == "" for c in col_index):
            stats.rows_dropped += 1
            continue
        tokens: list[str] = []
        for i, col in enumerate(schema.sentence_cols):
            if i > 0:
                tokens.append(SEP_TOKEN)
            tokens.extend(normalize_text(fields[col_index[col]]))
        rows.append((tokens, fields[col_index[schema.label_col]]))
    if stats.rows_dropped or stats.duplicates_removed:
        logger.warning(
            "%s: dropped %d incomplete rows, removed %d duplicate rows",
            path,
            stats.rows_dropped,
            stats.duplicates_removed,
        )

    if schema.bins is not None:
        if schema.bins < 2:
            raise SchemaError(f"bins must be >= 2, got {schema.bins}")
        values = [float(raw) for _, raw in rows]
        lo, hi = (min(values), max(values)) if values else (0.0, 0.0)
        span = hi - lo
        labels = [
            0 if span == 0.0 else min(schema.bins - 1, int((v - lo) / span * schema.bins))
            for v in values
        ]
        num_classes = schema.bins
    else:
        label_map: dict[str, int] = {}
        labels = []
        for _, raw in rows:
            if raw not in label_map:
                label_map[raw] = len(label_map)
            labels.append(label_map[raw])
        num_classes = max(len(label_map), 2)

    if vocab is None:
        extra = (SEP_TOKEN,) if pair else ()
        vocab = build_vocab((tokens for tokens, _ in rows), min_freq, extra_reserved=extra)
    examples = [
        encode_example(tokens, label, vocab, max_seq_len, example_id=i)
        for i, ((tokens, _), label) in enumerate(zip(rows, labels))
    ]
    return Dataset(
        examples=examples,
        num_classes=num_classes,
        split=split,
        provenance=f"tsv:{path}",
        vocab=vocab,
        max_seq_len=max_seq_len,
        load_stats=stats,
    )


SYNTH_KINDS = ("keyword", "parity", "majority")
KEYWORD_TRIGGER = "key"
PARITY_TOKEN = "x"


def _synth_vocab(kind: str, vocab_size: int) -> Vocab:
    if kind == "keyword":
        tokens = [KEYWORD_TRIGGER] + [f"w{i}" for i in range(1, vocab_size)]
    elif kind == "parity":
        tokens = [PARITY_TOKEN] + [f"w{i}" for i in range(1, vocab_size)]
    else:  # majority: first half labels class 0, second half class 1
        tokens = [f"a{i}" for i in range(vocab_size // 2)] + [
            f"b{i}" for i in range(vocab_size - vocab_size // 2)
        ]
    return _vocab_from_ordered(tokens)


def synth_task(
    kind: str,
    seed: int,
    n_examples: int,
    vocab_size: int,
    seq_len: int,
    split: str = "train",
) -> Dataset:
    """Deterministic balanced binary task over a synthetic vocabulary.

    keyword: label 1 iff the trigger token appears; parity: label = count of
    the "x" token mod 2; majority: label = the token group holding a strict
    majority.  Content lengths vary in [seq_len // 2, seq_len]; encoded length
    is seq_len + 1 for the CLS prefix.  Classes are balanced within one.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic task {kind!r}, expected one of {SYNTH_KINDS}")
    if n_examples < 1:
        raise ConfigError(f"n_examples must be >= 1, got {n_examples}")
    if vocab_size < 4:
        raise ConfigError(f"vocab_size must be >= 4, got {vocab_size}")
    if seq_len < 2:
        raise ConfigError(f"seq_len must be >= 2, got {seq_len}")
    vocab = _synth_vocab(kind, vocab_size)
    rng = np.random.Generator(np.random.PCG64(seed))
    tokens_of = vocab.id_to_token
    max_seq_len = seq_len + 1
    examples = []
    for i in range(n_examples):
        target = i % 2
        length = int(rng.integers(max(2, seq_len // 2), seq_len + 1))
        if kind == "keyword":
            words = [tokens_of[4 + int(j)] for j in rng.integers(1, vocab_size, size=length)]
            if target == 1:
                words[int(rng.integers(0, length))] = KEYWORD_TRIGGER
        elif kind == "parity":
            words = [tokens_of[4 + int(j)] for j in rng.integers(0, vocab_size, size=length)]
            if words.count(PARITY_TOKEN) % 2 != target:
                pos = int(rng.integers(0, length))
                if words[pos] == PARITY_TOKEN:
                    words[pos] = tokens_of[4 + int(rng.integers(1, vocab_size))]
                else:
                    words[pos] = PARITY_TOKEN
        else:  # majority
            half = vocab_size // 2
            k = int(rng.integers(length // 2 + 1, length + 1))
            major_lo = 0 if target == 0 else half
            major_n = half if target == 0 else vocab_size - half
            minor_lo = half if target == 0 else 0
            minor_n = vocab_size - half if target == 0 else half
            words = [tokens_of[4 + major_lo + int(j)] for j in rng.integers(0, major_n, size=k)]
            words += [
                tokens_of[4 + minor_lo + int(j)] for j in rng.integers(0, minor_n, size=length - k)
            ]
            perm = rng.permutation(length)
            words = [words[int(p)] for p in perm]
        examples.append(encode_example(words, target, vocab, max_seq_len, example_id=i))
    return Dataset(
        examples=examples,
        num_classes=2,
        split=split,
        provenance=f"synth:{kind}(seed={seed},n={n_examples},vocab={vocab_size},seq_len={seq_len})",
        vocab=vocab,
        max_seq_len=max_seq_len,
    )


def with_label_noise(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Copy of the dataset with a seeded round(fraction * n) subset of labels flipped."""
    if not (0.0 <= fraction <= 1.0):
        raise ConfigError(f"noise fraction must be in [0, 1], got {fraction}")
    n = len(dataset)
    k = int(round(fraction * n))
    rng = np.random.Generator(np.random.PCG64(seed))
    flip = set(int(i) for i in rng.choice(n, size=k, replace=False)) if k else set()
    examples = []
    for pos, ex in enumerate(dataset.examples):
        label = ex.label
        if pos in flip:
            label = (label + 1) % dataset.num_classes
        examples.append(
            Example(ex.example_id, ex.token_ids.copy(), ex.mask.copy(), label)
        )
    return Dataset(
        examples=examples,
        num_classes=dataset.num_classes,
        split=dataset.split,
        provenance=f"{dataset.provenance}+noise({fraction},seed={seed})",
        vocab=dataset.vocab,
        max_seq_len=dataset.max_seq_len,
    )


def batch_iter(dataset: Dataset, batch_size: int, epoch_seed: int):
    """Seeded shuffle, then consecutive slices; the final partial batch is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.Generator(np.random.PCG64(epoch_seed)).permutation(len(dataset))
    for lo in range(0, len(dataset), batch_size):
        yield [dataset.examples[int(i)] for i in order[lo : lo + batch_size]]


@dataclass
class DataSpec:
    """Where a run's train/validation data comes from.

    A nonempty ``task`` selects a synthetic generator; otherwise ``train_tsv``
    (and optionally ``val_tsv``) are loaded with the column schema fields.
    ``label_noise`` flips a seeded fraction of training labels only.
    """

    task: str = ""
    n_train: int = 512
    n_val: int = 128
    vocab_size: int = 50
    seq_len: int = 16
    label_noise: float = 0.0
    data_seed: int = 1234
    train_tsv: str = ""
    val_tsv: str = ""
    sentence_cols: tuple[str, ...] = ("sentence",)
    label_col: str = "label"
    bins: int = 0
    min_freq: int = 1
    max_seq_len: int = 32  # TSV encoding length; synthetic tasks use seq_len + 1

    def describe(self) -> str:
        return f"synth:{self.task}" if self.task else f"tsv:{self.train_tsv}"


def build_datasets(spec: DataSpec) -> tuple[Dataset, Dataset | None]:
    """Materialize (train, validation) per the spec; validation may be None for TSV."""
    if spec.task:
        train = synth_task(
            spec.task, spec.data_seed, spec.n_train, spec.vocab_size, spec.seq_len, split="train"
        )
        if spec.label_noise > 0.0:
            noise_seed = int(
                np.random.SeedSequence([spec.data_seed, 7]).generate_state(1, np.uint64)[0]
            )
            train = with_label_noise(train, spec.label_noise, noise_seed)
        val = synth_task(
            spec.task,
            spec.data_seed + 1,
            spec.n_val,
            spec.vocab_size,
            spec.seq_len,
            split="validation",
        )
        return train, val
    if not spec.train_tsv:
        raise ConfigError("missing dataset: set the 'task' key or the 'train_tsv' key")
    schema = TsvSchema(
        sentence_cols=list(spec.sentence_cols),
        label_col=spec.label_col,
        bins=spec.bins if spec.bins else None,
    )
    train = load_tsv(
        spec.train_tsv, schema, vocab=None, max_seq_len=spec.max_seq_len,
        min_freq=spec.min_freq, split="train",
    )
    val = None
    if spec.val_tsv:
        val = load_tsv(
            spec.val_tsv, schema, vocab=train.vocab, max_seq_len=spec.max_seq_len,
            min_freq=spec.min_freq, split="validation",
        )
        if val.num_classes > train.num_classes:
            raise ContractError(
                f"validation split has {val.num_classes} classes, train has {train.num_classes}"
            )
    return train, val
