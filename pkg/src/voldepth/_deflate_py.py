"""Pure-Python raw DEFLATE (RFC 1951) codec.

Reference twin of the compiled ``_native`` module: same LZ77 parse, same
block planning, so both produce identical bytes. Used when the extension
is not built and for cross-checking it.
"""

from __future__ import annotations

import numpy as np

from voldepth import _huffman as hf
from voldepth.errors import DeflateError

WINDOW = 32768
WMASK = WINDOW - 1
HASH_MASK = 0x7FFF
MIN_MATCH = 3
MAX_MATCH = 258
MAX_CHAIN = 32
NICE_MATCH = 128
BLOCK_SYMBOLS = 16384


class _BitWriter:
    def __init__(self) -> None:
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, value: int, nbits: int) -> None:
        self.acc |= value << self.nbits
        self.nbits += nbits
        if self.nbits >= 32:
            self.out += (self.acc & 0xFFFFFFFF).to_bytes(4, "little")
            self.acc >>= 32
            self.nbits -= 32

    def align(self) -> None:
        self.nbits = (self.nbits + 7) & ~7
        while self.nbits:
            self.out.append(self.acc & 0xFF)
            self.acc >>= 8
            self.nbits -= 8

    @property
    def bit_position(self) -> int:
        return 8 * len(self.out) + self.nbits

    def getvalue(self) -> bytes:
        self.align()
        return bytes(self.out)


def _match_length(data: bytes, a: int, b: int, limit: int) -> int:
    n = 0
    while n + 16 <= limit and data[a + n : a + n + 16] == data[b + n : b + n + 16]:
        n += 16
    while n < limit and data[a + n] == data[b + n]:
        n += 1
    return n


def _emit_block(w: _BitWriter, symbols, data: bytes, start: int, end: int, final: bool) -> None:
    litfreq = [0] * hf.NUM_LITLEN
    distfreq = [0] * hf.NUM_DIST
    length_code = hf.LENGTH_CODE
    dist_code = hf.DIST_CODE
    for length, value in symbols:
        if length == 0:
            litfreq[value] += 1
        else:
            litfreq[257 + length_code[length]] += 1
            distfreq[dist_code[value]] += 1
    litfreq[hf.END_OF_BLOCK] += 1

    plan = hf.plan_block(litfreq, distfreq, end - start, w.bit_position)
    if plan.btype == hf.BTYPE_STORED:
        pos = start
        while True:
            chunk = min(end - pos, 0xFFFF)
            last = pos + chunk >= end
            w.write(1 if (final and last) else 0, 3)
            w.align()
            w.write(chunk, 16)
            w.write(chunk ^ 0xFFFF, 16)
            w.align()
            w.out += data[pos : pos + chunk]
            pos += chunk
            if last:
                return

    w.write((1 if final else 0) | (plan.btype << 1), 3)
    for value, nbits in plan.header:
        w.write(value, nbits)
    ll_len, ll_code = plan.litlen_lengths, plan.litlen_codes
    dl_len, dl_code = plan.dist_lengths, plan.dist_codes
    lbase, lextra = hf.LENGTH_BASE, hf.LENGTH_EXTRA
    dbase, dextra = hf.DIST_BASE, hf.DIST_EXTRA
    write = w.write
    for length, value in symbols:
        if length == 0:
            write(ll_code[value], ll_len[value])
            continue
        lc = length_code[length]
        sym = 257 + lc
        write(ll_code[sym], ll_len[sym])
        if lextra[lc]:
            write(length - lbase[lc], lextra[lc])
        dc = dist_code[value]
        write(dl_code[dc], dl_len[dc])
        if dextra[dc]:
            write(value - dbase[dc], dextra[dc])
    write(ll_code[hf.END_OF_BLOCK], ll_len[hf.END_OF_BLOCK])


def _hashes(data: bytes) -> list[int]:
    """Hash of the 3 bytes starting at every position that has them."""
    if len(data) < MIN_MATCH:
        return []
    d = np.frombuffer(data, np.uint8).astype(np.int32)
    return (((d[:-2] << 10) ^ (d[1:-1] << 5) ^ d[2:]) & HASH_MASK).tolist()


def compress(data: bytes) -> bytes:
    """Compress ``data`` into a raw DEFLATE stream."""
    data = bytes(data)
    n = len(data)
    w = _BitWriter()
    head = [-1] * (HASH_MASK + 1)
    prev = [-1] * WINDOW
    hashes = _hashes(data)
    symbols: list[tuple[int, int]] = []
    block_start = 0
    pos = 0

    while pos < n:
        best_len = 0
        best_dist = 0
        if pos + MIN_MATCH <= n:
            h = hashes[pos]
            cand = head[h]
            limit = min(MAX_MATCH, n - pos)
            chain = MAX_CHAIN
            while cand >= 0 and chain > 0:
                dist = pos - cand
                if dist > WINDOW:
                    break
                if data[cand + best_len] == data[pos + best_len]:
                    length = _match_length(data, cand, pos, limit)
                    if length > best_len:
                        best_len = length
                        best_dist = dist
                        if length >= NICE_MATCH or length == limit:
                            break
                cand = prev[cand & WMASK]
                chain -= 1
            prev[pos & WMASK] = head[h]
            head[h] = pos

        if best_len >= MIN_MATCH:
            symbols.append((best_len, best_dist))
            stop = min(pos + best_len, n - MIN_MATCH + 1)
            for p in range(pos + 1, stop):
                h = hashes[p]
                prev[p & WMASK] = head[h]
                head[h] = p
            pos += best_len
        else:
            symbols.append((0, data[pos]))
            pos += 1

        if len(symbols) >= BLOCK_SYMBOLS and pos < n:
            _emit_block(w, symbols, data, block_start, pos, final=False)
            symbols = []
            block_start = pos

    _emit_block(w, symbols, data, block_start, n, final=True)
    return w.getvalue()


# ---- inflate ----


def _build_decode_table(lengths: list[int]) -> tuple[list[int] | None, int]:
    """Lookup table indexed by the next ``max_len`` input bits.

    Entries are ``(symbol << 4) | length`` or -1 for unused codes.
    """
    max_len = max(lengths, default=0)
    if max_len == 0:
        return None, 0
    left = 1
    for bits in range(1, max_len + 1):
        left = (left << 1) - lengths.count(bits)
        if left < 0:
            raise DeflateError("over-subscribed Huffman code")
    codes = hf.canonical_codes(lengths)
    size = 1 << max_len
    table = [-1] * size
    for sym, length in enumerate(lengths):
        if length:
            entry = (sym << 4) | length
            for idx in range(codes[sym], size, 1 << length):
                table[idx] = entry
    return table, max_len


_FIXED_LITLEN = _build_decode_table(hf.FIXED_LITLEN_LENGTHS)
_FIXED_DIST = _build_decode_table(hf.FIXED_DIST_LENGTHS)


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def _fill(self, want: int) -> None:
        data = self.data
        while self.nbits < want and self.pos < len(data):
            self.acc |= data[self.pos] << self.nbits
            self.pos += 1
            self.nbits += 8

    def bits(self, n: int) -> int:
        if self.nbits < n:
            self._fill(n)
            if self.nbits < n:
                raise DeflateError("unexpected end of stream")
        value = self.acc & ((1 << n) - 1)
        self.acc >>= n
        self.nbits -= n
        return value

    def symbol(self, table: list[int] | None, max_len: int) -> int:
        if table is None:
            raise DeflateError("symbol read from an empty Huffman code")
        if self.nbits < max_len:
            self._fill(max_len)
        entry = table[self.acc & ((1 << max_len) - 1)]
        if entry < 0:
            raise DeflateError("invalid Huffman code")
        length = entry & 15
        if length > self.nbits:
            raise DeflateError("unexpected end of stream")
        self.acc >>= length
        self.nbits -= length
        return entry >> 4

    def align(self) -> None:
        drop = self.nbits & 7
        self.acc >>= drop
        self.nbits -= drop

    def consumed(self) -> int:
        return self.pos - self.nbits // 8


def _read_dynamic_tables(r: _BitReader):
    hlit = r.bits(5) + 257
    hdist = r.bits(5) + 1
    hclen = r.bits(4) + 4
    if hlit > hf.NUM_LITLEN or hdist > hf.NUM_DIST:
        raise DeflateError("too many length or distance symbols")
    cl = [0] * 19
    for i in range(hclen):
        cl[hf.CLEN_ORDER[i]] = r.bits(3)
    cl_table, cl_max = _build_decode_table(cl)

    lengths: list[int] = []
    total = hlit + hdist
    while len(lengths) < total:
        sym = r.symbol(cl_table, cl_max)
        if sym < 16:
            lengths.append(sym)
            continue
        if sym == 16:
            if not lengths:
                raise DeflateError("repeat with no previous length")
            value, count = lengths[-1], 3 + r.bits(2)
        elif sym == 17:
            value, count = 0, 3 + r.bits(3)
        else:
            value, count = 0, 11 + r.bits(7)
        if len(lengths) + count > total:
            raise DeflateError("code length repeat overflows table")
        lengths.extend([value] * count)

    ll = lengths[:hlit]
    if ll[hf.END_OF_BLOCK] == 0:
        raise DeflateError("missing end-of-block code")
    return _build_decode_table(ll), _build_decode_table(lengths[hlit:])


def decompress(data: bytes) -> bytes:
    """Inflate a raw DEFLATE stream; trailing bytes after the final block are an error."""
    r = _BitReader(bytes(data))
    out = bytearray()
    lbase, lextra = hf.LENGTH_BASE, hf.LENGTH_EXTRA
    dbase, dextra = hf.DIST_BASE, hf.DIST_EXTRA

    while True:
        final = r.bits(1)
        btype = r.bits(2)
        if btype == hf.BTYPE_STORED:
            r.align()
            length = r.bits(16)
            nlength = r.bits(16)
            if length ^ 0xFFFF != nlength:
                raise DeflateError("stored block length check failed")
            # bit buffer is byte aligned here; drain it before slicing input
            for _ in range(min(length, r.nbits // 8)):
                out.append(r.bits(8))
                length -= 1
            if length:
                if r.pos + length > len(r.data):
                    raise DeflateError("unexpected end of stream")
                out += r.data[r.pos : r.pos + length]
                r.pos += length
        elif btype in (hf.BTYPE_FIXED, hf.BTYPE_DYNAMIC):
            if btype == hf.BTYPE_FIXED:
                (lit_t, lit_m), (dist_t, dist_m) = _FIXED_LITLEN, _FIXED_DIST
            else:
                (lit_t, lit_m), (dist_t, dist_m) = _read_dynamic_tables(r)
            while True:
                sym = r.symbol(lit_t, lit_m)
                if sym < 256:
                    out.append(sym)
                    continue
                if sym == hf.END_OF_BLOCK:
                    break
                lc = sym - 257
                if lc >= 29:
                    raise DeflateError("invalid length symbol")
                length = lbase[lc] + (r.bits(lextra[lc]) if lextra[lc] else 0)
                dc = r.symbol(dist_t, dist_m)
                if dc >= 30:
                    raise DeflateError("invalid distance symbol")
                dist = dbase[dc] + (r.bits(dextra[dc]) if dextra[dc] else 0)
                if dist > len(out):
                    raise DeflateError("distance too far back")
                start = len(out) - dist
                if dist >= length:
                    out += out[start : start + length]
                else:
                    chunk = out[start:]
                    out += (chunk * (length // dist + 1))[:length]
        else:
            raise DeflateError("reserved block type")
        if final:
            break

    if r.consumed() != len(r.data):
        raise DeflateError("trailing data after final block")
    return bytes(out)
