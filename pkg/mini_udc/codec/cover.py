"""Greedy set-cover quantizers over a single type class.

A cover codebook lists reconstruction words such that every member of the
type class lies within distortion level of at least one of them. Members
map to the first added word that covers them.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Hashable, Optional

import numpy as np

from mini_udc.codec.bitcoder import BitString
from mini_udc.codec.prefix_code import PrefixCode, build_prefix_code
from mini_udc.core.distortion_space import ClassFingerprint
from mini_udc.core.method_of_types import (
    MAX_WORDS,
    NType,
    all_words,
    rank_counts,
    type_class_members,
    type_class_size,
)
from mini_udc.errors import SizeError

logger = logging.getLogger(__name__)

MAX_MEMBERS = 1_000_000
MAX_CANDIDATES = MAX_WORDS
CHUNK_CELLS = 4_000_000
MIN_BLOCK = 256

# covers(xs, ys) -> bool matrix, entry [a, b] true when ys[b] is within level of xs[a]
CoverPredicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CoverCodebook:
    key: Hashable
    words: np.ndarray
    preimage_counts: np.ndarray
    assignment: np.ndarray
    code: PrefixCode
    predicate: CoverPredicate

    def __len__(self) -> int:
        return int(self.words.shape[0])

    def assign(self, x: np.ndarray) -> int:
        """Index of the first codebook word covering x."""
        hits = self.predicate(x[None, :], self.words)[0]
        idx = np.flatnonzero(hits)
        if idx.size == 0:
            raise SizeError("word is not covered by this codebook (wrong type class?)")
        return int(idx[0])

    def payload(self, index: int) -> BitString:
        return self.code.encode(index)

    def mean_payload_bits(self) -> float:
        return self.code.expected_length(self.preimage_counts.tolist())


def _chunk_rows(n_cols: int, width: int) -> int:
    return max(1, CHUNK_CELLS // max(1, n_cols * width))


def pair_joint_counts(xs: np.ndarray, ys: np.ndarray, J: int, K: int) -> np.ndarray:
    """Joint-type count vectors for every (xs[a], ys[b]) pair, shape (a, b, J*K)."""
    codes = xs[:, None, :] * K + ys[None, :, :]
    return np.stack([(codes == c).sum(axis=-1) for c in range(J * K)], axis=-1)


def label_predicate(fp: ClassFingerprint, n: int, J: int, K: int) -> CoverPredicate:
    """Covered iff the pair's joint type is labeled +1 by the class fingerprint."""
    labels = fp.labels

    def covers(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        out = np.empty((xs.shape[0], ys.shape[0]), dtype=bool)
        step = _chunk_rows(ys.shape[0], max(n, J * K))
        for a in range(0, xs.shape[0], step):
            counts = pair_joint_counts(xs[a : a + step], ys, J, K)
            out[a : a + step] = labels[rank_counts(counts, n)]
        return out

    return covers


def digit_predicate(digits: np.ndarray, threshold: int) -> CoverPredicate:
    """Covered iff the summed integer distortion digits stay at or under threshold.

    The digit sum is a one-hot product: x picks row i*J + x_i of a table whose
    column for y holds digits[:, y_i] at positions i*J .. i*J + J - 1.
    """
    J = digits.shape[0]
    table = digits.astype(np.float64)

    def covers(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        n = xs.shape[1]
        cols = table[:, ys].transpose(2, 0, 1).reshape(n * J, ys.shape[0])
        out = np.empty((xs.shape[0], ys.shape[0]), dtype=bool)
        step = _chunk_rows(ys.shape[0], 1)
        offsets = np.arange(n) * J
        for a in range(0, xs.shape[0], step):
            block = xs[a : a + step]
            onehot = np.zeros((block.shape[0], n * J))
            onehot[np.arange(block.shape[0])[:, None], offsets + block] = 1.0
            out[a : a + step] = onehot @ cols <= threshold + 0.5
        return out

    return covers


def _candidate_scores(predicate: CoverPredicate, rows: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Per-candidate count of rows it covers, streamed over candidate blocks."""
    scores = np.zeros(candidates.shape[0], dtype=np.int64)
    if rows.shape[0] == 0:
        return scores
    block = min(max(MIN_BLOCK, CHUNK_CELLS // rows.shape[0]), max(1, CHUNK_CELLS // candidates.shape[1]))
    for b in range(0, candidates.shape[0], block):
        scores[b : b + block] = predicate(rows, candidates[b : b + block]).sum(axis=0, dtype=np.int64)
    return scores


def greedy_cover(key: Hashable, t: NType, K: int, predicate: CoverPredicate) -> CoverCodebook:
    """Greedy set cover of T(t) by words of B^n.

    Each step adds the candidate covering the most uncovered members; ties go
    to the lexicographically smallest word. Scores are kept per candidate and
    lowered by the rows each step covers, so no coverage matrix is stored.
    """
    size = type_class_size(t)
    if size > MAX_MEMBERS:
        raise SizeError(f"type class of size {size} exceeds {MAX_MEMBERS}; reduce n")
    if K**t.n > MAX_CANDIDATES:
        raise SizeError(f"{K}^{t.n} candidate words exceeds {MAX_CANDIDATES}; reduce n")

    members = type_class_members(t)
    candidates = all_words(t.n, K)
    scores = _candidate_scores(predicate, members, candidates)
    uncovered = np.ones(size, dtype=bool)
    assignment = np.full(size, -1, dtype=np.int64)
    chosen = []
    counts = []
    while uncovered.any():
        best = int(np.argmax(scores))
        if scores[best] == 0:
            raise SizeError("type class cannot be covered at this level")
        open_rows = np.flatnonzero(uncovered)
        hit = predicate(members[open_rows], candidates[best : best + 1])[:, 0]
        newly = open_rows[hit]
        assignment[newly] = len(chosen)
        chosen.append(best)
        counts.append(int(newly.size))
        scores -= _candidate_scores(predicate, members[newly], candidates)
        uncovered[newly] = False

    words = candidates[chosen]
    preimage = np.array(counts, dtype=np.int64)
    logger.debug("cover %s: %d members -> %d words", key, size, len(chosen))
    return CoverCodebook(key, words, preimage, assignment, build_prefix_code(counts), predicate)


class CoverCache:
    """Covers memoized by key; inserts are exclusive, lookups concurrent-safe."""

    def __init__(self):
        self._covers: Dict[Hashable, CoverCodebook] = {}
        self._lock = threading.Lock()

    def get(self, key: Hashable) -> Optional[CoverCodebook]:
        with self._lock:
            return self._covers.get(key)

    def get_or_build(self, key: Hashable, t: NType, K: int, predicate: CoverPredicate) -> CoverCodebook:
        hit = self.get(key)
        if hit is not None:
            return hit
        cb = greedy_cover(key, t, K, predicate)
        with self._lock:
            return self._covers.setdefault(key, cb)

    def clear(self) -> None:
        with self._lock:
            self._covers.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._covers)


covers_cache = CoverCache()
