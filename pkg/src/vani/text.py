"""Transcript normalization, CER, duplicate detection and the shared symbol table."""
from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import regex

from vani import kernels

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

DANDA = "।"
_WS = re.compile(r"\s+")
_GRAPHEME = regex.compile(r"\X")


class TextError(ValueError):
    pass


class EmptyReferenceError(TextError):
    pass


class UnknownSymbolError(TextError):
    pass


def normalize_transcript(s: str) -> str:
    s = unicodedata.normalize("NFC", s)
    s = s.replace("|", DANDA)
    s = _WS.sub(" ", s).strip()
    # second pass: collapsing/stripping can expose new composition sites
    return unicodedata.normalize("NFC", s)


def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32).astype(np.int32)


def edit_distance(ref: str, hyp: str) -> int:
    """Levenshtein distance over unicode scalar values with unit costs."""
    return int(kernels.levenshtein(_codes(ref), _codes(hyp)))


def cer(ref: str, hyp: str) -> float:
    ref_n = normalize_transcript(ref)
    if not ref_n:
        raise EmptyReferenceError("reference transcript is empty after normalization")
    return edit_distance(ref_n, normalize_transcript(hyp)) / len(ref_n)


def pack_strings(strings: Iterable[str]) -> tuple:
    """Concatenate strings into one code array plus offsets, for batch kernels."""
    codes = [_codes(s) for s in strings]
    offsets = np.zeros(len(codes) + 1, dtype=np.int64)
    if codes:
        offsets[1:] = np.cumsum([len(c) for c in codes])
        flat = np.concatenate(codes) if offsets[-1] else np.zeros(0, dtype=np.int32)
    else:
        flat = np.zeros(0, dtype=np.int32)
    return flat, offsets


def find_duplicates(m) -> list:
    """Groups of clip ids sharing a normalized transcript.

    Each group is sorted by clip id; everything after the first entry is the
    set flagged for removal.
    """
    groups: dict = {}
    for r in m.records:
        groups.setdefault(normalize_transcript(r.transcript_gt), []).append(r.clip_id)
    return sorted(sorted(ids) for ids in groups.values() if len(ids) >= 2)


def graphemes(s: str) -> list:
    return _GRAPHEME.findall(s)


@dataclass(frozen=True)
class SymbolTable:
    symbols: tuple
    use_unk: bool = True

    def __post_init__(self):
        if tuple(self.symbols[: len(RESERVED)]) != RESERVED:
            raise TextError("symbol table must start with the reserved symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise TextError("symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def index(self) -> dict:
        return self._index

    def to_json(self) -> str:
        return json.dumps(list(self.symbols), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str, use_unk: bool = True) -> "SymbolTable":
        return cls(tuple(json.loads(text)), use_unk)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path, use_unk: bool = True) -> "SymbolTable":
        return cls.from_json(Path(path).read_text(encoding="utf-8"), use_unk)


def build_symbol_table(*manifests, use_unk: bool = True) -> SymbolTable:
    clusters = set()
    for m in manifests:
        for r in m.records:
            clusters.update(graphemes(normalize_transcript(r.transcript_gt)))
    return SymbolTable(RESERVED + tuple(sorted(clusters)), use_unk)


def tokenize(s: str, table: SymbolTable) -> list:
    ids = [BOS_ID]
    for pos, g in enumerate(graphemes(normalize_transcript(s))):
        idx = table.index.get(g)
        if idx is None or idx < len(RESERVED):
            if not table.use_unk:
                raise UnknownSymbolError(f"unknown symbol {g!r} at position {pos}")
            idx = UNK_ID
        ids.append(idx)
    ids.append(EOS_ID)
    return ids


def detokenize(ids: Iterable[int], table: SymbolTable) -> str:
    return "".join(table.symbols[i] for i in ids if i >= len(RESERVED))


def pairwise_cer(refs: list, hyps: list, pairs: Optional[np.ndarray] = None) -> np.ndarray:
    """CER for many (ref, hyp) pairs through the batch kernel.

    ``pairs`` is an ``(n, 2)`` array of indices into ``refs`` and ``hyps``;
    when omitted the lists are zipped. Inputs must already be normalized.
    """
    refs = list(refs)
    hyps = list(hyps)
    codes, offsets = pack_strings(refs + hyps)
    if pairs is None:
        ia = np.arange(len(refs), dtype=np.int64)
        ib = ia + len(refs)
    else:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        ia = np.ascontiguousarray(pairs[:, 0])
        ib = np.ascontiguousarray(pairs[:, 1]) + len(refs)
    lengths = np.diff(offsets)[ia]
    if np.any(lengths == 0):
        raise EmptyReferenceError("reference transcript is empty after normalization")
    dist = kernels.pairwise_levenshtein(codes, offsets, ia, ib)
    return dist / lengths
