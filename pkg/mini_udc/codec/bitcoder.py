"""Bit-exact I/O: MSB-first bit strings, fixed fields, Elias codes and the UDSF container."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Tuple, Union

from mini_udc.errors import DecodeError, DomainError


def floor_log2(i: int) -> int:
    if i < 1:
        raise DomainError(f"log2 of non-positive {i}")
    return i.bit_length() - 1


def ceil_log2(m: int) -> int:
    """Bits needed to index m alternatives (0 when m <= 1)."""
    return (m - 1).bit_length() if m > 1 else 0


# ==== bit strings ====

@dataclass(frozen=True)
class BitString:
    value: int = 0
    length: int = 0

    def __post_init__(self):
        if self.length < 0 or self.value < 0 or self.value >> self.length:
            raise DomainError(f"value {self.value} does not fit in {self.length} bits")

    @classmethod
    def from_str(cls, bits: str) -> "BitString":
        if bits and set(bits) - {"0", "1"}:
            raise DomainError(f"not a bit string: {bits!r}")
        return cls(int(bits, 2) if bits else 0, len(bits))

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> "BitString":
        if (length + 7) // 8 != len(data):
            raise DecodeError(f"{len(data)} bytes cannot hold exactly {length} bits")
        pad = 8 * len(data) - length
        value = int.from_bytes(data, "big")
        if value & ((1 << pad) - 1):
            raise DecodeError("nonzero pad bits")
        return cls(value >> pad, length)

    def to_bytes(self) -> bytes:
        nbytes = (self.length + 7) // 8
        return (self.value << (8 * nbytes - self.length)).to_bytes(nbytes, "big")

    def __str__(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""

    def __len__(self) -> int:
        return self.length

    def __add__(self, other: "BitString") -> "BitString":
        return BitString((self.value << other.length) | other.value, self.length + other.length)

    def startswith(self, other: "BitString") -> bool:
        if other.length > self.length:
            return False
        return self.value >> (self.length - other.length) == other.value


class BitWriter:
    def __init__(self):
        self.value = 0
        self.length = 0

    def write(self, value: int, width: int) -> None:
        """fixed_field_write: value MSB-first in exactly ``width`` bits."""
        if width < 0 or value < 0 or value >> width:
            raise DomainError(f"value {value} overflows a {width}-bit field")
        self.value = (self.value << width) | value
        self.length += width

    def write_bit(self, bit: int) -> None:
        self.write(1 if bit else 0, 1)

    def write_bits(self, bits: BitString) -> None:
        self.write(bits.value, bits.length)

    def getvalue(self) -> BitString:
        return BitString(self.value, self.length)


class BitReader:
    def __init__(self, bits: BitString):
        self.bits = bits
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self.bits.length - self.pos

    def at_end(self) -> bool:
        return self.pos == self.bits.length

    def read(self, width: int) -> int:
        """fixed_field_read."""
        if width > self.remaining:
            raise DecodeError(f"truncated: need {width} bits, {self.remaining} left")
        shift = self.bits.length - self.pos - width
        self.pos += width
        return (self.bits.value >> shift) & ((1 << width) - 1)

    def read_bit(self) -> int:
        return self.read(1)


def fixed_field(value: int, width: int) -> BitString:
    w = BitWriter()
    w.write(value, width)
    return w.getvalue()


# ==== Elias codes ====

def elias_gamma_encode(i: int) -> BitString:
    """floor(log2 i) zeros, then i in binary."""
    if i < 1:
        raise DomainError(f"Elias gamma needs i >= 1, got {i}")
    nb = floor_log2(i)
    return BitString(i, 2 * nb + 1)


def elias_gamma_decode(reader: BitReader) -> int:
    zeros = 0
    while reader.read_bit() == 0:
        zeros += 1
    return (1 << zeros) | reader.read(zeros)


def elias2_encode(i: int) -> BitString:
    """Doubly recursive Elias code: gamma(N1), N0 in N1+1 bits, i in N0+1 bits.

    N0 = floor(log2 i) and N1 = floor(log2 N0); defined for i >= 4.
    """
    if i < 4:
        raise DomainError(f"doubly recursive Elias code needs i >= 4, got {i}")
    n0 = floor_log2(i)
    n1 = floor_log2(n0)
    w = BitWriter()
    w.write_bits(elias_gamma_encode(n1))
    w.write(n0, n1 + 1)
    w.write(i, n0 + 1)
    return w.getvalue()


def _read_leading_one(reader: BitReader, width: int) -> int:
    v = reader.read(width)
    if not v >> (width - 1):
        raise DecodeError("malformed Elias field: missing leading 1")
    return v


def elias2_decode(bits: Union[BitString, BitReader]) -> Tuple[int, int]:
    """Returns (i, bits consumed)."""
    reader = bits if isinstance(bits, BitReader) else BitReader(bits)
    start = reader.pos
    n1 = elias_gamma_decode(reader)
    n0 = _read_leading_one(reader, n1 + 1)
    i = _read_leading_one(reader, n0 + 1)
    if i < 4:
        raise DecodeError(f"decoded {i} outside the Elias domain")
    return i, reader.pos - start


def elias2_length(i: int) -> int:
    n0 = floor_log2(i)
    n1 = floor_log2(n0)
    return n0 + 1 + n1 + 1 + 2 * floor_log2(n1) + 1


def elias2_bound(i: int) -> float:
    """log i + log log i + 2 log log log i + 3 (base 2)."""
    l1 = math.log2(i)
    l2 = math.log2(l1)
    return l1 + l2 + 2 * math.log2(l2) + 3 if l2 > 0 else math.inf


def plain_binary(i: int) -> BitString:
    """Binary of i with no length prefix; not prefix-free."""
    return BitString(i, max(1, i.bit_length()))


# ==== container ====

MAGIC = b"UDSF"
VERSION = 1
CODEC_IDS = {"t1": 1, "t2": 2, "nml": 3}
CODEC_NAMES = {v: k for k, v in CODEC_IDS.items()}
RNG_PHILOX_BLAKE2B = 1
HEADER = struct.Struct(">4sBBHBBQIBI")  # magic ver codec n J K seed cap rng payload_bits


@dataclass(frozen=True)
class Container:
    codec: str
    n: int
    J: int
    K: int
    payload: BitString
    seed: int = 0
    cap: int = 0
    rng_id: int = 0
    version: int = VERSION

    def pack(self) -> bytes:
        if self.codec not in CODEC_IDS:
            raise DomainError(f"unknown codec {self.codec!r}")
        try:
            head = HEADER.pack(
                MAGIC, self.version, CODEC_IDS[self.codec], self.n, self.J, self.K,
                self.seed, self.cap, self.rng_id, self.payload.length,
            )
        except struct.error as e:
            raise DomainError(f"container field out of range: {e}") from e
        return head + self.payload.to_bytes()

    @classmethod
    def unpack(cls, data: bytes) -> "Container":
        if len(data) < HEADER.size:
            raise DecodeError(f"container truncated: {len(data)} < {HEADER.size} header bytes")
        magic, version, codec_id, n, J, K, seed, cap, rng_id, nbits = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DecodeError(f"unsupported container version {version}")
        if codec_id not in CODEC_NAMES:
            raise DecodeError(f"unknown codec id {codec_id}")
        body = data[HEADER.size:]
        if len(body) != (nbits + 7) // 8:
            raise DecodeError(f"payload holds {len(body)} bytes, header says {nbits} bits")
        payload = BitString.from_bytes(body, nbits)
        return cls(CODEC_NAMES[codec_id], n, J, K, payload, seed, cap, rng_id, version)
