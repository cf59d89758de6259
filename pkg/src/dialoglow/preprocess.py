"""Chat text cleanup, tokenization and vocabulary handling.

Cleaning pipeline, in order: URLs to <url>, emoji to their textual
meanings, every other non-ASCII character dropped, lowercasing, standalone
numerals to <number>, then known person names to <name> and known place
names to <location>. Duplicate-collapse runs afterwards and marks stretchy
spellings with <duplicate>; tokenization keeps placeholders and
contractions whole and splits punctuation off. Each stage is idempotent.
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from pathlib import Path
from typing import Iterable

# Token sequences are plain lists of non-empty, whitespace-free strings.
TokenSequence = list

PAD, UNK = "<pad>", "<unk>"
SPECIALS = (PAD, UNK, "<name>", "<location>", "<number>", "<url>", "<duplicate>")
PAD_ID, UNK_ID = 0, 1

_DATA_DIR = Path(__file__).resolve().parent / "data"

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_NUMBER_RE = re.compile(r"\b\d+(?:[.,:]\d+)*\b")
_PLACEHOLDER_CHUNK_RE = re.compile(r"^<[a-z]+>$")
_TOKEN_RE = re.compile(r"<[a-z]+>|[a-z0-9]+(?:'[a-z0-9]+)*|\S")


def _read_table(path: Path) -> dict[str, str]:
    table = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        surface, _, replacement = line.partition("\t")
        if surface and replacement:
            table[surface] = replacement
    return table


_TABLES: dict[str, object] = {}


def _emoji_table() -> dict[str, str]:
    if "emoji" not in _TABLES:
        _TABLES["emoji"] = _read_table(_DATA_DIR / "emoji.tsv")
    return _TABLES["emoji"]


def _lexicon_re(which: str) -> "re.Pattern[str]":
    key = which + "_re"
    if key not in _TABLES:
        entries = sorted(_read_table(_DATA_DIR / f"{which}.tsv"), key=len, reverse=True)
        _TABLES[key] = re.compile(
            r"\b(?:" + "|".join(re.escape(e) for e in entries) + r")\b"
        )
    return _TABLES[key]


def clean_text(raw: str) -> str:
    """Normalize one raw utterance to lowercase ASCII plus placeholders."""
    s = _URL_RE.sub("<url>", raw)
    emoji = _emoji_table()
    if not s.isascii():
        out = []
        for ch in s:
            meaning = emoji.get(ch)
            if meaning is not None:
                out.append(f" {meaning} ")
            elif ch.isascii():
                out.append(ch)
        s = "".join(out)
    s = s.lower()
    s = _NUMBER_RE.sub("<number>", s)
    s = _lexicon_re("names").sub("<name>", s)
    s = _lexicon_re("locations").sub("<location>", s)
    return " ".join(s.split())


def _runs(chunk: str) -> Iterable[tuple[str, int]]:
    i = 0
    while i < len(chunk):
        j = i
        while j < len(chunk) and chunk[j] == chunk[i]:
            j += 1
        yield chunk[i], j - i
        i = j


def collapse_duplicates(text: str) -> str:
    """Collapse stretched spellings, appending a <duplicate> marker.

    Three or more repeated letters inside a word keep one copy and mark the
    word; two or more repeated punctuation marks become a single detached
    mark plus the marker. "cool" stays as is, "oooooh" becomes
    "oh <duplicate>" and "oh!!!!!!" becomes "oh ! <duplicate>".
    """
    pieces = []
    for chunk in text.split():
        if _PLACEHOLDER_CHUNK_RE.match(chunk):
            pieces.append(chunk)
            continue
        current: list[str] = []
        marked = False

        def flush():
            nonlocal marked
            if current:
                pieces.append("".join(current) + (" <duplicate>" if marked else ""))
                current.clear()
            marked = False

        for ch, n in _runs(chunk):
            if ch.isalnum():
                if n >= 3:
                    current.append(ch)
                    marked = True
                else:
                    current.append(ch * n)
            elif n >= 2:
                flush()
                pieces.append(ch + " <duplicate>")
            else:
                current.append(ch)
        flush()
    return " ".join(pieces)


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split into tokens; empty input maps to [<unk>].

    Placeholders stay atomic, contractions stay attached ("don't" is one
    token) and punctuation becomes separate single-character tokens.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    return tokens if tokens else [UNK]


def prepare(raw: str) -> TokenSequence:
    """Full pipeline: clean, collapse duplicates, tokenize."""
    return tokenize(collapse_duplicates(clean_text(raw)))


class Vocab:
    """Bijective token/id mapping with pinned special tokens.

    Ids are dense, <pad> is always 0 and <unk> always 1. The persisted
    form is one token per line with the line number as the id.
    """

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = list(tokens)
        if self.tokens[: len(SPECIALS)] != list(SPECIALS):
            raise ValueError(f"vocab must start with the special tokens {SPECIALS}")
        self.index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if not tok or tok != tok.strip() or any(c.isspace() for c in tok):
                raise ValueError(f"bad vocab token at id {i}: {tok!r}")
            if tok in self.index:
                raise ValueError(f"duplicate vocab token: {tok!r}")
            self.index[tok] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, seq: Iterable[str]) -> list[int]:
        """Map tokens to ids; unknown tokens (and any literal <pad>) to <unk>."""
        out = []
        for tok in seq:
            i = self.index.get(tok, UNK_ID)
            out.append(UNK_ID if i == PAD_ID else i)
        return out

    def save(self, path: "str | Path") -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: "str | Path") -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def build_vocab(corpus: Iterable[Iterable[str]], min_count: int = 1) -> Vocab:
    """Specials first, then tokens by descending count, ties alphabetical.

    Tokens seen fewer than min_count times are left out and will encode
    to <unk>.
    """
    counts = Counter()
    for seq in corpus:
        counts.update(seq)
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= min_count and tok not in SPECIALS),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocab(list(SPECIALS) + ranked)


def vocab_sha256(path: "str | Path") -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def vocab_content_sha256(vocab: Vocab) -> str:
    """Hash of exactly the bytes save() would write, no file needed."""
    blob = ("\n".join(vocab.tokens) + "\n").encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
