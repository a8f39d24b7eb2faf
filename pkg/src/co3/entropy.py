"""
Entropy coding of quantized gradients.

Symbol probabilities come from a GenNorm model of the pre-quantization
values: each grid level receives the model mass of its Voronoi cell.  A
canonical Huffman code is derived from those probabilities deterministically,
so encoder and decoder rebuild the identical code from the four reals
(bias, mu, alpha, beta) carried in the frame header.

Frame layout (all multi-byte fields big-endian)::

    0   3  magic b"CO3"
    3   1  version (0x01: normal-range grid, 0x02: grid with subnormals)
    4   1  format: exp_bits << 4 | mant_bits
    5   8  bias    float64
    13  8  mu      float64
    21  8  alpha   float64
    29  8  beta    float64
    37  8  element count, uint64
    45  -  Huffman payload, MSB-first, zero-padded to a byte boundary
"""
import functools
import heapq
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from co3.distfit import GenNormParams, gennorm_cdf
from co3.errors import DecodeError, EncodeError, ParameterDomainError
from co3.fpquant import FpFormat, QuantizedBlock, grid_levels

MAGIC = b"CO3"
VERSION_NORMAL = 0x01
VERSION_SUBNORMAL = 0x02
_HEADER = struct.Struct(">3sBBddddQ")
HEADER_BYTES = _HEADER.size
HEADER_BITS = 8 * HEADER_BYTES


@dataclass(frozen=True)
class LevelPmf:
    levels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if len(self.levels) != len(self.probs):
            raise ParameterDomainError("levels and probs differ in length")

    def entropy(self) -> float:
        """Shannon entropy in bits."""
        return entropy_bits(self.probs)


def entropy_bits(probs) -> float:
    p = np.asarray(probs, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def level_probabilities(p: GenNormParams, fmt: FpFormat) -> LevelPmf:
    """Model mass of each level's nearest-neighbour cell under GenNorm ``p``."""
    levels = grid_levels(fmt)
    mids = 0.5 * (levels[:-1] + levels[1:])
    cdf = np.concatenate([[0.0], gennorm_cdf(mids, p), [1.0]])
    probs = np.clip(np.diff(cdf), 0.0, None)
    probs = probs / probs.sum()
    return LevelPmf(levels, probs)


# -- Huffman construction -----------------------------------------------------

@dataclass(frozen=True)
class HuffmanCode:
    lengths: Tuple[int, ...]
    codes: Tuple[int, ...]
    _tables: dict = field(default=None, compare=False, repr=False, hash=False)

    @property
    def size(self) -> int:
        return len(self.lengths)

    @property
    def max_length(self) -> int:
        return max(self.lengths)

    def kraft_sum(self) -> float:
        return float(sum(2.0 ** -ell for ell in self.lengths))

    def expected_length(self, probs) -> float:
        return float(np.dot(np.asarray(probs, dtype=float), np.asarray(self.lengths, dtype=float)))

    def codeword(self, symbol: int) -> str:
        ell = self.lengths[symbol]
        return format(self.codes[symbol], f"0{ell}b")

    def payload_bits(self, symbols) -> int:
        return int(np.asarray(self.lengths, dtype=np.int64)[np.asarray(symbols, dtype=np.int64)].sum())

    @property
    def tables(self):
        if self._tables is None:
            object.__setattr__(self, "_tables", _build_tables(self))
        return self._tables


def _canonical_codes(lengths: Sequence[int]) -> Tuple[int, ...]:
    order = sorted(range(len(lengths)), key=lambda s: (lengths[s], s))
    codes = [0] * len(lengths)
    code = 0
    prev = lengths[order[0]]
    for i, s in enumerate(order):
        if i:
            code = (code + 1) << (lengths[s] - prev)
        codes[s] = code
        prev = lengths[s]
    return tuple(codes)


def build_huffman(pmf) -> HuffmanCode:
    """Canonical Huffman code for ``pmf`` (a :class:`LevelPmf` or a probability vector).

    Nodes are merged lowest probability first, ties broken by the smallest
    symbol index they contain.  Zero-probability symbols are pooled into a
    single zero-weight node that takes part in the merging like any other;
    its members then share a balanced subtree, so they stay encodable and sit
    at the bottom of the code.  A lone symbol gets a 1-bit codeword.
    """
    probs = np.asarray(pmf.probs if isinstance(pmf, LevelPmf) else pmf, dtype=float)
    n = probs.size
    if n == 0:
        raise ParameterDomainError("cannot build a code for an empty alphabet")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ParameterDomainError("probabilities must be finite and non-negative")
    positive = [s for s in range(n) if probs[s] > 0]
    zeros = [s for s in range(n) if not probs[s] > 0]
    if not positive:
        raise ParameterDomainError("need at least one symbol with positive probability")

    # heap entries: (weight, smallest member, node id); node -> list of (symbol, depth offset)
    members: Dict[int, List[Tuple[int, int]]] = {}
    heap = []
    for s in positive:
        members[s] = [(s, 0)]
        heap.append((float(probs[s]), s, s))
    if zeros:
        group_depth = math.ceil(math.log2(len(zeros))) if len(zeros) > 1 else 0
        members[n] = [(s, group_depth) for s in zeros]
        heap.append((0.0, zeros[0], n))
    heapq.heapify(heap)
    lengths = [0] * n
    if len(heap) == 1:
        for s, off in members[heap[0][2]]:
            lengths[s] = max(1, off)
        return HuffmanCode(tuple(lengths), _canonical_codes(lengths))
    next_id = n + 1
    while len(heap) > 1:
        w1, k1, a = heapq.heappop(heap)
        w2, k2, b = heapq.heappop(heap)
        merged = [(s, d + 1) for s, d in members.pop(a)] + [(s, d + 1) for s, d in members.pop(b)]
        members[next_id] = merged
        heapq.heappush(heap, (w1 + w2, min(k1, k2), next_id))
        next_id += 1
    for s, depth in members[heap[0][2]]:
        lengths[s] = depth
    return HuffmanCode(tuple(lengths), _canonical_codes(lengths))


# -- bit I/O ------------------------------------------------------------------

_PEEK = 12


def _build_tables(code: HuffmanCode):
    lengths = np.asarray(code.lengths, dtype=np.int64)
    maxlen = int(lengths.max())
    # bit matrix for vectorized encoding
    bits = np.zeros((code.size, maxlen), dtype=np.uint8)
    for s, (ell, c) in enumerate(zip(code.lengths, code.codes)):
        for j in range(ell):
            bits[s, j] = (c >> (ell - 1 - j)) & 1
    # prefix lookup for codewords no longer than the peek window
    peek = min(_PEEK, maxlen)
    table_sym = np.full(1 << peek, -1, dtype=np.int64)
    table_len = np.zeros(1 << peek, dtype=np.int64)
    for s, (ell, c) in enumerate(zip(code.lengths, code.codes)):
        if ell <= peek:
            lo = c << (peek - ell)
            table_sym[lo: lo + (1 << (peek - ell))] = s
            table_len[lo: lo + (1 << (peek - ell))] = ell
    # canonical decoding state for long codewords
    by_len: Dict[int, Dict[int, int]] = {}
    for s, (ell, c) in enumerate(zip(code.lengths, code.codes)):
        by_len.setdefault(ell, {})[c] = s
    return {
        "bits": bits,
        "lengths": lengths,
        "peek": peek,
        "table_sym": table_sym.tolist(),
        "table_len": table_len.tolist(),
        "by_len": by_len,
        "maxlen": maxlen,
    }


def encode(block, code: HuffmanCode) -> Tuple[bytes, int]:
    """Concatenate codewords MSB-first; returns ``(payload, payload_bits)``.

    ``payload_bits`` excludes the zero padding added to reach a byte boundary.
    """
    symbols = np.asarray(block.symbols if isinstance(block, QuantizedBlock) else block, dtype=np.int64).ravel()
    if symbols.size == 0:
        return b"", 0
    if symbols.min() < 0 or symbols.max() >= code.size:
        raise EncodeError("symbol outside the code alphabet")
    t = code.tables
    lens = t["lengths"][symbols]
    total = int(lens.sum())
    starts = np.cumsum(lens) - lens
    owner = np.repeat(np.arange(symbols.size), lens)
    offset = np.arange(total) - np.repeat(starts, lens)
    bitstream = t["bits"][symbols[owner], offset]
    return np.packbits(bitstream).tobytes(), total


def decode(stream: bytes, code: HuffmanCode, n: int, nbits: Optional[int] = None) -> np.ndarray:
    """Decode ``n`` symbols.  ``nbits`` bounds the meaningful payload (defaults to all bytes)."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    avail = 8 * len(stream) if nbits is None else nbits
    if avail > 8 * len(stream):
        raise DecodeError("declared payload longer than the stream")
    t = code.tables
    peek = t["peek"]
    bits = np.unpackbits(np.frombuffer(stream, dtype=np.uint8))
    padded = np.concatenate([bits, np.zeros(peek, dtype=np.uint8)]).astype(np.int64)
    window = np.zeros(bits.size, dtype=np.int64)
    for j in range(peek):
        window = (window << 1) | padded[j: j + bits.size]
    window = window.tolist()
    bit_list = None
    table_sym, table_len, by_len, maxlen = t["table_sym"], t["table_len"], t["by_len"], t["maxlen"]
    out = [0] * n
    pos = 0
    for i in range(n):
        if pos >= avail:
            raise DecodeError(f"stream exhausted after {i} of {n} symbols")
        w = window[pos]
        ell = table_len[w]
        if ell:
            out[i] = table_sym[w]
        else:
            if bit_list is None:
                bit_list = bits.tolist()
            c = w
            ell = peek
            while True:
                hit = by_len.get(ell, {}).get(c)
                if hit is not None:
                    out[i] = hit
                    break
                if ell >= maxlen or pos + ell >= len(bit_list):
                    raise DecodeError("bit pattern matches no codeword")
                c = (c << 1) | bit_list[pos + ell]
                ell += 1
        pos += ell
        if pos > avail:
            raise DecodeError("truncated codeword at end of stream")
    return np.asarray(out, dtype=np.int64)


# -- framing ------------------------------------------------------------------

@dataclass(frozen=True)
class FrameHeader:
    format: FpFormat
    params: GenNormParams
    count: int

    def pack(self) -> bytes:
        f = self.format
        version = VERSION_SUBNORMAL if f.subnormals else VERSION_NORMAL
        return _HEADER.pack(MAGIC, version, (f.exp_bits << 4) | f.mant_bits, f.bias,
                            self.params.mu, self.params.alpha, self.params.beta, self.count)


@dataclass(frozen=True)
class EncodedFrame:
    data: bytes
    payload_bits: int

    @property
    def frame_bits(self) -> int:
        return 8 * len(self.data)

    @property
    def header_bits(self) -> int:
        """Everything that is not codeword payload: fixed header plus padding."""
        return self.frame_bits - self.payload_bits


@functools.lru_cache(maxsize=1024)
def _code_for(exp_bits, mant_bits, bias, subnormals, mu, alpha, beta) -> HuffmanCode:
    fmt = FpFormat(exp_bits, mant_bits, bias, subnormals)
    return build_huffman(level_probabilities(GenNormParams(mu, alpha, beta), fmt))


def code_for(params: GenNormParams, fmt: FpFormat) -> HuffmanCode:
    """Shared codebook for (params, format); memoized so both ends reuse it."""
    return _code_for(fmt.exp_bits, fmt.mant_bits, fmt.bias, fmt.subnormals,
                     params.mu, params.alpha, params.beta)


def encode_frame(block: QuantizedBlock, params: GenNormParams) -> EncodedFrame:
    code = code_for(params, block.format)
    header = FrameHeader(block.format, params, block.length).pack()
    payload, nbits = encode(block, code)
    return EncodedFrame(header + payload, nbits)


def parse_frame(data: bytes) -> Tuple[FrameHeader, bytes]:
    if len(data) < HEADER_BYTES:
        raise DecodeError("frame shorter than its header")
    magic, version, fmt_byte, bias, mu, alpha, beta, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    if version not in (VERSION_NORMAL, VERSION_SUBNORMAL):
        raise DecodeError(f"unsupported frame version {version}")
    try:
        fmt = FpFormat(fmt_byte >> 4, fmt_byte & 0x0F, bias, version == VERSION_SUBNORMAL)
        params = GenNormParams(mu, alpha, beta)
    except ParameterDomainError as exc:
        raise DecodeError(f"invalid header: {exc}") from exc
    return FrameHeader(fmt, params, count), data[HEADER_BYTES:]


def decode_frame(data: bytes) -> QuantizedBlock:
    header, payload = parse_frame(data)
    code = code_for(header.params, header.format)
    symbols = decode(payload, code, header.count)
    return QuantizedBlock(header.format, symbols)


def universal_size_bits(block: QuantizedBlock) -> int:
    """Size of the symbol stream under zlib, for comparison with the Huffman payload."""
    raw = np.asarray(block.symbols, dtype=np.uint8 if block.format.alphabet_size <= 256 else np.uint16)
    return 8 * len(zlib.compress(raw.tobytes(), 9))


# -- communication ledger -----------------------------------------------------

@dataclass
class CommLedger:
    """Per-round, per-user bit counts; ``total_bits`` is their sum."""
    entries: Dict[Tuple[int, int], List[int]] = field(default_factory=dict)

    def record(self, t: int, u: int, payload_bits: int, header_bits: int = 0) -> "CommLedger":
        cell = self.entries.setdefault((t, u), [0, 0])
        cell[0] += int(payload_bits)
        cell[1] += int(header_bits)
        return self

    @property
    def payload_bits(self) -> int:
        return sum(c[0] for c in self.entries.values())

    @property
    def header_bits(self) -> int:
        return sum(c[1] for c in self.entries.values())

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.header_bits

    def bits_per_round_per_user(self, rounds: Optional[int] = None, users: Optional[int] = None) -> np.ndarray:
        """Matrix of payload+header bits indexed ``[t, u]``."""
        if rounds is None:
            rounds = 1 + max((t for t, _ in self.entries), default=-1)
        if users is None:
            users = 1 + max((u for _, u in self.entries), default=-1)
        out = np.zeros((rounds, users), dtype=np.int64)
        for (t, u), (p, h) in self.entries.items():
            out[t, u] = p + h
        return out

    def round_totals(self, t: int) -> Tuple[int, int]:
        p = sum(c[0] for (tt, _), c in self.entries.items() if tt == t)
        h = sum(c[1] for (tt, _), c in self.entries.items() if tt == t)
        return p, h


def ledger_record(ledger: CommLedger, t: int, u: int, payload_bits: int, header_bits: int = 0) -> CommLedger:
    return ledger.record(t, u, payload_bits, header_bits)
