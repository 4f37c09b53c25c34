"""Canonical Huffman codes over codebook indices."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

from mini_udc.codec.bitcoder import BitReader, BitString
from mini_udc.errors import DecodeError, InvalidInputError


def huffman_lengths(counts: Sequence[int]) -> Tuple[int, ...]:
    """Optimal code lengths; ties merge the earliest-created node first."""
    m = len(counts)
    if m == 0:
        raise InvalidInputError("cannot build a code over zero words")
    if m == 1:
        return (0,)
    order = itertools.count()
    heap = [(c, next(order), (i,)) for i, c in enumerate(counts)]
    heapq.heapify(heap)
    depth = [0] * m
    while len(heap) > 1:
        c1, _, a = heapq.heappop(heap)
        c2, _, b = heapq.heappop(heap)
        for i in a + b:
            depth[i] += 1
        heapq.heappush(heap, (c1 + c2, next(order), a + b))
    return tuple(depth)


@dataclass(frozen=True)
class PrefixCode:
    lengths: Tuple[int, ...]
    codes: Tuple[BitString, ...] = field(init=False)
    _decode: Dict[Tuple[int, int], int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        # canonical assignment: by (length, index)
        codes = [BitString()] * len(self.lengths)
        value, prev = 0, 0
        for i in sorted(range(len(self.lengths)), key=lambda i: (self.lengths[i], i)):
            L = self.lengths[i]
            value <<= L - prev
            codes[i] = BitString(value, L)
            value += 1
            prev = L
        object.__setattr__(self, "codes", tuple(codes))
        object.__setattr__(self, "_decode", {(c.length, c.value): i for i, c in enumerate(codes)})

    def __len__(self) -> int:
        return len(self.lengths)

    def encode(self, index: int) -> BitString:
        return self.codes[index]

    def decode(self, reader: BitReader) -> int:
        if len(self.lengths) == 1:
            return 0
        value, length = 0, 0
        top = max(self.lengths)
        while length < top:
            value = (value << 1) | reader.read_bit()
            length += 1
            hit = self._decode.get((length, value))
            if hit is not None:
                return hit
        raise DecodeError("bit pattern matches no codeword")

    def kraft_sum(self) -> float:
        return math.fsum(2.0 ** -L for L in self.lengths)

    def expected_length(self, counts: Sequence[int]) -> float:
        """Mean bits under the empirical distribution counts / sum(counts)."""
        total = sum(counts)
        return math.fsum(c * L for c, L in zip(counts, self.lengths)) / total


def build_prefix_code(counts: Sequence[int]) -> PrefixCode:
    return PrefixCode(huffman_lengths(counts))
