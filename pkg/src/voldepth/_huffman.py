"""DEFLATE symbol tables and per-block Huffman planning.

Shared by the compiled and the pure-Python compressors so that both emit
byte-identical streams: the LZ77 pass and bit emission live in the
backends, every decision about code lengths and block type lives here.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

MAX_BITS = 15
MAX_CL_BITS = 7
END_OF_BLOCK = 256
NUM_LITLEN = 286
NUM_DIST = 30

BTYPE_STORED = 0
BTYPE_FIXED = 1
BTYPE_DYNAMIC = 2

LENGTH_BASE = (
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31,
    35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258,
)
LENGTH_EXTRA = (
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2,
    3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
)
DIST_BASE = (
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193,
    257, 385, 513, 769, 1025, 1537, 2049, 3073, 4097, 6145,
    8193, 12289, 16385, 24577,
)
DIST_EXTRA = (
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6,
    7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13,
)
CLEN_ORDER = (16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15)
CLEN_EXTRA = {16: 2, 17: 3, 18: 7}


def _length_code_table() -> list[int]:
    table = [0] * 259
    for idx, (base, extra) in enumerate(zip(LENGTH_BASE, LENGTH_EXTRA)):
        for length in range(base, min(base + (1 << extra), 259)):
            table[length] = idx
    table[258] = 28
    return table


def _dist_code_table() -> list[int]:
    table = [0] * 32769
    for idx, (base, extra) in enumerate(zip(DIST_BASE, DIST_EXTRA)):
        for dist in range(base, min(base + (1 << extra), 32769)):
            table[dist] = idx
    return table


# index by match length (3..258) / distance (1..32768); value is the code index
LENGTH_CODE = _length_code_table()
DIST_CODE = _dist_code_table()

FIXED_LITLEN_LENGTHS = [8] * 144 + [9] * 112 + [7] * 24 + [8] * 8
FIXED_DIST_LENGTHS = [5] * 32


def package_merge(freqs: list[int], max_bits: int) -> list[int]:
    """Optimal length-limited Huffman code lengths.

    Symbols with zero frequency get length 0. Ties are broken by symbol
    index, so the result is a pure function of ``freqs``.
    """
    lengths = [0] * len(freqs)
    leaves = sorted((f, s) for s, f in enumerate(freqs) if f > 0)
    if not leaves:
        return lengths
    if len(leaves) == 1:
        lengths[leaves[0][1]] = 1
        return lengths
    if len(leaves) > (1 << max_bits):
        raise ValueError("too many symbols for the length limit")

    # leaf: (weight, symbol); package: (weight, -1, child_a, child_b)
    base = [(f, s) for f, s in leaves]
    current = base
    for _ in range(max_bits - 1):
        packaged = [
            (current[i][0] + current[i + 1][0], -1, current[i], current[i + 1])
            for i in range(0, len(current) - 1, 2)
        ]
        # stable sort: leaves precede packages of equal weight
        current = sorted(base + packaged, key=lambda item: item[0])
    stack = current[: 2 * len(leaves) - 2]
    while stack:
        item = stack.pop()
        if item[1] >= 0:
            lengths[item[1]] += 1
        else:
            stack.append(item[2])
            stack.append(item[3])
    return lengths


def huffman_lengths(freqs: list[int]) -> list[int]:
    """Unrestricted Huffman code lengths (ties broken by creation order)."""
    lengths = [0] * len(freqs)
    heap = [(f, s, s) for s, f in enumerate(freqs) if f > 0]
    if len(heap) < 2:
        for _, s, _ in heap:
            lengths[s] = 1
        return lengths
    heapq.heapify(heap)
    parent: dict[int, int] = {}
    order = len(freqs)
    while len(heap) > 1:
        fa, _, a = heapq.heappop(heap)
        fb, _, b = heapq.heappop(heap)
        parent[a] = parent[b] = order
        heapq.heappush(heap, (fa + fb, order, order))
        order += 1
    root = heap[0][2]
    depth = {root: 0}
    for node in range(order - 1, len(freqs) - 1, -1):
        if node != root:
            depth[node] = depth[parent[node]] + 1
    for s, f in enumerate(freqs):
        if f > 0:
            lengths[s] = depth[parent[s]] + 1
    return lengths


def limited_lengths(freqs: list[int], max_bits: int) -> list[int]:
    lengths = huffman_lengths(freqs)
    if max(lengths, default=0) <= max_bits:
        return lengths
    return package_merge(freqs, max_bits)


def tree_lengths(freqs: list[int], max_bits: int) -> list[int]:
    """Code lengths that always form a complete code of at least two symbols.

    A lone used symbol gets a partner so every conformant inflater accepts
    the tree, including ones that reject incomplete codes.
    """
    used = [s for s, f in enumerate(freqs) if f > 0]
    if len(used) < 2:
        freqs = list(freqs)
        if not used:
            freqs[0] = freqs[1] = 1
        else:
            freqs[1 if used[0] == 0 else 0] = 1
    return limited_lengths(freqs, max_bits)


def reverse_bits(code: int, nbits: int) -> int:
    out = 0
    for _ in range(nbits):
        out = (out << 1) | (code & 1)
        code >>= 1
    return out


def canonical_codes(lengths: list[int]) -> list[int]:
    """Canonical codes, bit-reversed for LSB-first emission."""
    max_len = max(lengths, default=0)
    bl_count = [0] * (max_len + 1)
    for length in lengths:
        if length:
            bl_count[length] += 1
    next_code = [0] * (max_len + 2)
    code = 0
    for bits in range(1, max_len + 1):
        code = (code + bl_count[bits - 1]) << 1
        next_code[bits] = code
    codes = [0] * len(lengths)
    for sym, length in enumerate(lengths):
        if length:
            codes[sym] = reverse_bits(next_code[length], length)
            next_code[length] += 1
    return codes


def rle_code_lengths(lengths: list[int]) -> list[tuple[int, int]]:
    """Run-length encode a code-length table into (symbol, extra) pairs."""
    out: list[tuple[int, int]] = []
    i, n = 0, len(lengths)
    while i < n:
        cur = lengths[i]
        run = 1
        while i + run < n and lengths[i + run] == cur:
            run += 1
        i += run
        if cur == 0:
            while run >= 11:
                take = min(run, 138)
                out.append((18, take - 11))
                run -= take
            if run >= 3:
                out.append((17, run - 3))
                run = 0
            out.extend([(0, 0)] * run)
        else:
            out.append((cur, 0))
            run -= 1
            while run >= 3:
                take = min(run, 6)
                out.append((16, take - 3))
                run -= take
            out.extend([(cur, 0)] * run)
    return out


@dataclass
class BlockPlan:
    btype: int
    cost_bits: int
    # (value, nbits) fields following the 3-bit block header; dynamic only
    header: list[tuple[int, int]]
    litlen_lengths: list[int]
    litlen_codes: list[int]
    dist_lengths: list[int]
    dist_codes: list[int]


_LITLEN_EXTRA = [0] * 257 + list(LENGTH_EXTRA)


def _data_bits(litfreq, distfreq, ll_lengths, dl_lengths) -> int:
    return sum(map(lambda f, n, e: f * (n + e), litfreq, ll_lengths, _LITLEN_EXTRA)) + sum(
        map(lambda f, n, e: f * (n + e), distfreq, dl_lengths, DIST_EXTRA)
    )


def stored_cost(raw_len: int, bit_pos: int) -> int:
    pos = bit_pos
    remaining = raw_len
    while True:
        chunk = min(remaining, 0xFFFF)
        pos += 3
        pos = (pos + 7) & ~7
        pos += 32 + 8 * chunk
        remaining -= chunk
        if remaining <= 0:
            break
    return pos - bit_pos


def plan_block(litfreq: list[int], distfreq: list[int], raw_len: int, bit_pos: int) -> BlockPlan:
    """Pick the cheapest of stored, fixed and dynamic coding for one block.

    ``litfreq`` must already count the end-of-block symbol. ``bit_pos`` is
    the writer position before the block header; stored blocks depend on
    it through byte alignment.
    """
    ll = tree_lengths(litfreq, MAX_BITS)
    dl = tree_lengths(distfreq, MAX_BITS)
    hlit = max(257, max(s for s, v in enumerate(ll) if v) + 1)
    hdist = max(1, max(s for s, v in enumerate(dl) if v) + 1)
    rle = rle_code_lengths(ll[:hlit]) + rle_code_lengths(dl[:hdist])

    clfreq = [0] * 19
    for sym, _ in rle:
        clfreq[sym] += 1
    cl = tree_lengths(clfreq, MAX_CL_BITS)
    cl_codes = canonical_codes(cl)
    hclen = 19
    while hclen > 4 and cl[CLEN_ORDER[hclen - 1]] == 0:
        hclen -= 1

    header = [(hlit - 257, 5), (hdist - 1, 5), (hclen - 4, 4)]
    header += [(cl[CLEN_ORDER[i]], 3) for i in range(hclen)]
    for sym, extra in rle:
        header.append((cl_codes[sym], cl[sym]))
        if sym >= 16:
            header.append((extra, CLEN_EXTRA[sym]))

    dyn_cost = 3 + sum(n for _, n in header) + _data_bits(litfreq, distfreq, ll, dl)
    fixed_cost = 3 + _data_bits(litfreq, distfreq, FIXED_LITLEN_LENGTHS, FIXED_DIST_LENGTHS)
    st_cost = stored_cost(raw_len, bit_pos)

    if st_cost < min(dyn_cost, fixed_cost):
        return BlockPlan(BTYPE_STORED, st_cost, [], [], [], [], [])
    if dyn_cost < fixed_cost:
        return BlockPlan(
            BTYPE_DYNAMIC, dyn_cost, header, ll, canonical_codes(ll), dl, canonical_codes(dl)
        )
    return BlockPlan(
        BTYPE_FIXED,
        fixed_cost,
        [],
        FIXED_LITLEN_LENGTHS,
        FIXED_LITLEN_CODES,
        FIXED_DIST_LENGTHS,
        FIXED_DIST_CODES,
    )


FIXED_LITLEN_CODES = canonical_codes(FIXED_LITLEN_LENGTHS)
FIXED_DIST_CODES = canonical_codes(FIXED_DIST_LENGTHS)
