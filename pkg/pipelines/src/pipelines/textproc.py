"""Character-level text plumbing shared by the pipelines.

This package talks to the curation core only over files and the wire
protocol, so the small text primitives it needs (tokenizer, edit similarity,
best-of selection) live here rather than being imported from it.
"""

from __future__ import annotations

from typing import Callable, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789 .,'-"
_CHAR_TO_ID = {ch: i + 4 for i, ch in enumerate(_CHARS)}
_ID_TO_CHAR = {i: ch for ch, i in _CHAR_TO_ID.items()}

VOCAB_SIZE = len(_CHARS) + 4


def encode_chars(text: str, max_len: int | None = None) -> list[int]:
    ids = [_CHAR_TO_ID.get(ch, UNK) for ch in text.lower()]
    if max_len is not None:
        ids = ids[:max_len]
    return ids


def decode_chars(ids: Sequence[int]) -> str:
    return "".join(_ID_TO_CHAR.get(i, "") for i in ids if i not in (PAD, BOS, EOS))


def edit_distance(x: str, y: str) -> int:
    """Levenshtein distance, two-row dynamic program."""
    if x == y:
        return 0
    if not x:
        return len(y)
    if not y:
        return len(x)
    if len(x) < len(y):
        x, y = y, x
    previous = list(range(len(y) + 1))
    for row, cx in enumerate(x, start=1):
        current = [row] + [0] * len(y)
        for col, cy in enumerate(y, start=1):
            current[col] = min(previous[col] + 1, current[col - 1] + 1,
                               previous[col - 1] + (cx != cy))
        previous = current
    return previous[-1]


def edit_similarity(x: str, y: str) -> float:
    """1 - dist/max-length, in [0, 1]; 1 iff equal."""
    if not x and not y:
        raise ValueError("undefined for two empty strings")
    return 1.0 - edit_distance(x, y) / max(len(x), len(y))


def best_of(source: str, candidates: Sequence[str],
            sim: Callable[[str, str], float] = edit_similarity) -> tuple[int, float]:
    """Index and similarity of the candidate closest to ``source``; ties take
    the lowest index."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    best_idx, best_sim = 0, sim(source, candidates[0])
    for idx in range(1, len(candidates)):
        s = sim(source, candidates[idx])
        if s > best_sim:
            best_idx, best_sim = idx, s
    return best_idx, best_sim


def similarity_provider(name: str) -> Callable[[str, str], float]:
    """Resolve a fidelity measure by name.

    ``edit`` is always available. ``bertscore`` requires the optional
    bert-score stack and model downloads; it raises with a clear message
    when that backend is absent.
    """
    if name == "edit":
        return edit_similarity
    if name == "bertscore":
        try:
            from bert_score import score as bert_score  # type: ignore
        except ImportError as exc:
            raise RuntimeError(
                "the bertscore similarity backend needs the bert-score package "
                "and its model checkpoints; install them or use --similarity edit"
            ) from exc

        def provider(x: str, y: str) -> float:
            _, _, f1 = bert_score([y], [x], lang="en")
            return float(f1[0])

        return provider
    raise ValueError(f"unknown similarity provider {name!r}")
