# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled raw DEFLATE kernels.

Mirrors ``voldepth._deflate_py`` step for step (same hash, chain limits and
block planner) so output is byte-identical to the pure-Python twin.
"""

from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc, realloc
from libc.string cimport memcpy

from voldepth import _huffman as hf
from voldepth.errors import DeflateError

cdef enum:
    WINDOW = 32768
    WMASK = 32767
    HASH_SIZE = 32768
    HASH_MASK = 32767
    MIN_MATCH = 3
    MAX_MATCH = 258
    MAX_CHAIN = 32
    NICE_MATCH = 128
    BLOCK_SYMBOLS = 16384
    TABLE_BITS = 15

cdef uint8_t LENGTH_CODE[259]
cdef uint8_t DIST_CODE[32769]
cdef uint16_t LBASE[29]
cdef uint8_t LEXTRA[29]
cdef uint16_t DBASE[30]
cdef uint8_t DEXTRA[30]
cdef uint8_t CLEN_ORDER[19]

for _i in range(259):
    LENGTH_CODE[_i] = hf.LENGTH_CODE[_i]
for _i in range(32769):
    DIST_CODE[_i] = hf.DIST_CODE[_i]
for _i in range(29):
    LBASE[_i] = hf.LENGTH_BASE[_i]
    LEXTRA[_i] = hf.LENGTH_EXTRA[_i]
for _i in range(30):
    DBASE[_i] = hf.DIST_BASE[_i]
    DEXTRA[_i] = hf.DIST_EXTRA[_i]
for _i in range(19):
    CLEN_ORDER[_i] = hf.CLEN_ORDER[_i]


# ---- bit writer ----

cdef struct Writer:
    uint8_t* buf
    size_t length
    size_t cap
    uint64_t acc
    int nbits


cdef int w_reserve(Writer* w, size_t extra) except -1:
    cdef size_t need = w.length + extra
    cdef uint8_t* grown
    if need <= w.cap:
        return 0
    while w.cap < need:
        w.cap = w.cap * 2 + 64
    grown = <uint8_t*> realloc(w.buf, w.cap)
    if grown == NULL:
        raise MemoryError()
    w.buf = grown
    return 0


cdef inline int w_bits(Writer* w, uint32_t value, int nbits) except -1:
    w.acc |= (<uint64_t> value) << w.nbits
    w.nbits += nbits
    if w.nbits >= 32:
        w_reserve(w, 4)
        w.buf[w.length] = w.acc & 0xFF
        w.buf[w.length + 1] = (w.acc >> 8) & 0xFF
        w.buf[w.length + 2] = (w.acc >> 16) & 0xFF
        w.buf[w.length + 3] = (w.acc >> 24) & 0xFF
        w.length += 4
        w.acc >>= 32
        w.nbits -= 32
    return 0


cdef int w_align(Writer* w) except -1:
    w.nbits = (w.nbits + 7) & ~7
    w_reserve(w, 8)
    while w.nbits:
        w.buf[w.length] = w.acc & 0xFF
        w.length += 1
        w.acc >>= 8
        w.nbits -= 8
    return 0


# ---- compressor ----

cdef int emit_block(Writer* w, const uint8_t* data, uint16_t* lens, uint16_t* vals,
                    int nsym, Py_ssize_t start, Py_ssize_t end, bint final) except -1:
    cdef int64_t litfreq[286]
    cdef int64_t distfreq[30]
    cdef uint16_t ll_code[288]
    cdef uint8_t ll_len[288]
    cdef uint16_t dl_code[32]
    cdef uint8_t dl_len[32]
    cdef int i, lc, dc, sym
    cdef uint16_t length, value
    cdef Py_ssize_t pos, chunk
    cdef bint last

    for i in range(286):
        litfreq[i] = 0
    for i in range(30):
        distfreq[i] = 0
    for i in range(nsym):
        if lens[i] == 0:
            litfreq[vals[i]] += 1
        else:
            litfreq[257 + LENGTH_CODE[lens[i]]] += 1
            distfreq[DIST_CODE[vals[i]]] += 1
    litfreq[256] += 1

    plan = hf.plan_block(
        [litfreq[i] for i in range(286)],
        [distfreq[i] for i in range(30)],
        end - start,
        8 * w.length + w.nbits,
    )

    if plan.btype == hf.BTYPE_STORED:
        pos = start
        while True:
            chunk = end - pos
            if chunk > 0xFFFF:
                chunk = 0xFFFF
            last = pos + chunk >= end
            w_bits(w, 1 if (final and last) else 0, 3)
            w_align(w)
            w_bits(w, <uint32_t> chunk, 16)
            w_bits(w, <uint32_t> (chunk ^ 0xFFFF), 16)
            w_align(w)
            w_reserve(w, chunk)
            memcpy(w.buf + w.length, data + pos, chunk)
            w.length += chunk
            pos += chunk
            if last:
                return 0

    w_bits(w, (1 if final else 0) | (plan.btype << 1), 3)
    for value_, nbits_ in plan.header:
        w_bits(w, value_, nbits_)
    for i, v in enumerate(plan.litlen_lengths):
        ll_len[i] = v
    for i, v in enumerate(plan.litlen_codes):
        ll_code[i] = v
    for i, v in enumerate(plan.dist_lengths):
        dl_len[i] = v
    for i, v in enumerate(plan.dist_codes):
        dl_code[i] = v

    for i in range(nsym):
        length = lens[i]
        value = vals[i]
        if length == 0:
            w_bits(w, ll_code[value], ll_len[value])
            continue
        lc = LENGTH_CODE[length]
        sym = 257 + lc
        w_bits(w, ll_code[sym], ll_len[sym])
        if LEXTRA[lc]:
            w_bits(w, length - LBASE[lc], LEXTRA[lc])
        dc = DIST_CODE[value]
        w_bits(w, dl_code[dc], dl_len[dc])
        if DEXTRA[dc]:
            w_bits(w, value - DBASE[dc], DEXTRA[dc])
    w_bits(w, ll_code[256], ll_len[256])
    return 0


cdef inline int match_length(const uint8_t* data, Py_ssize_t a, Py_ssize_t b, int limit) nogil:
    cdef int n = 0
    while n < limit and data[a + n] == data[b + n]:
        n += 1
    return n


def compress(const uint8_t[::1] src):
    """Compress a contiguous byte buffer into a raw DEFLATE stream."""
    cdef Py_ssize_t n = src.shape[0]
    cdef const uint8_t* data = &src[0] if n > 0 else NULL
    cdef Writer w
    cdef int32_t* head = <int32_t*> malloc(HASH_SIZE * sizeof(int32_t))
    cdef int32_t* prev = <int32_t*> malloc(WINDOW * sizeof(int32_t))
    cdef uint16_t* lens = <uint16_t*> malloc(BLOCK_SYMBOLS * sizeof(uint16_t))
    cdef uint16_t* vals = <uint16_t*> malloc(BLOCK_SYMBOLS * sizeof(uint16_t))
    cdef Py_ssize_t pos = 0, block_start = 0, p, stop, cand, dist
    cdef int nsym = 0, best_len, best_dist, limit, chain, length
    cdef uint32_t h

    w.buf = NULL
    w.length = 0
    w.cap = 0
    w.acc = 0
    w.nbits = 0
    try:
        if head == NULL or prev == NULL or lens == NULL or vals == NULL:
            raise MemoryError()
        w_reserve(&w, n // 2 + 64)
        for p in range(HASH_SIZE):
            head[p] = -1
        for p in range(WINDOW):
            prev[p] = -1

        while pos < n:
            best_len = 0
            best_dist = 0
            if pos + MIN_MATCH <= n:
                h = ((<uint32_t> data[pos] << 10) ^ (<uint32_t> data[pos + 1] << 5) ^ data[pos + 2]) & HASH_MASK
                cand = head[h]
                limit = MAX_MATCH if n - pos > MAX_MATCH else <int> (n - pos)
                chain = MAX_CHAIN
                while cand >= 0 and chain > 0:
                    dist = pos - cand
                    if dist > WINDOW:
                        break
                    if data[cand + best_len] == data[pos + best_len]:
                        length = match_length(data, cand, pos, limit)
                        if length > best_len:
                            best_len = length
                            best_dist = <int> dist
                            if length >= NICE_MATCH or length == limit:
                                break
                    cand = prev[cand & WMASK]
                    chain -= 1
                prev[pos & WMASK] = head[h]
                head[h] = <int32_t> pos

            if best_len >= MIN_MATCH:
                lens[nsym] = best_len
                vals[nsym] = best_dist
                nsym += 1
                stop = pos + best_len
                if stop > n - MIN_MATCH + 1:
                    stop = n - MIN_MATCH + 1
                for p in range(pos + 1, stop):
                    h = ((<uint32_t> data[p] << 10) ^ (<uint32_t> data[p + 1] << 5) ^ data[p + 2]) & HASH_MASK
                    prev[p & WMASK] = head[h]
                    head[h] = <int32_t> p
                pos += best_len
            else:
                lens[nsym] = 0
                vals[nsym] = data[pos]
                nsym += 1
                pos += 1

            if nsym >= BLOCK_SYMBOLS and pos < n:
                emit_block(&w, data, lens, vals, nsym, block_start, pos, False)
                nsym = 0
                block_start = pos

        emit_block(&w, data, lens, vals, nsym, block_start, n, True)
        w_align(&w)
        return (<char*> w.buf)[:w.length] if w.length else b""
    finally:
        free(head)
        free(prev)
        free(lens)
        free(vals)
        free(w.buf)


# ---- inflater ----

cdef struct Reader:
    const uint8_t* data
    Py_ssize_t n
    Py_ssize_t pos
    uint64_t acc
    int nbits


cdef inline void r_fill(Reader* r) nogil:
    while r.nbits <= 56 and r.pos < r.n:
        r.acc |= (<uint64_t> r.data[r.pos]) << r.nbits
        r.pos += 1
        r.nbits += 8


cdef inline int r_bits(Reader* r, int n) except -1:
    cdef int value
    if n == 0:
        return 0
    if r.nbits < n:
        r_fill(r)
        if r.nbits < n:
            raise DeflateError("unexpected end of stream")
    value = <int> (r.acc & ((1ULL << n) - 1))
    r.acc >>= n
    r.nbits -= n
    return value


cdef int build_table(const uint8_t* lengths, int count, int32_t* table, int* max_len) except -1:
    """Fill ``table`` (2**max_len entries of (sym << 4) | len, -1 unused)."""
    cdef int bl_count[16]
    cdef int next_code[16]
    cdef int i, bits, code, left, size, sym, length, rev, j
    for i in range(16):
        bl_count[i] = 0
    max_len[0] = 0
    for i in range(count):
        bl_count[lengths[i]] += 1
        if lengths[i] > max_len[0]:
            max_len[0] = lengths[i]
    if max_len[0] == 0:
        return 0
    left = 1
    for bits in range(1, max_len[0] + 1):
        left = (left << 1) - bl_count[bits]
        if left < 0:
            raise DeflateError("over-subscribed Huffman code")
    code = 0
    bl_count[0] = 0
    for bits in range(1, 16):
        code = (code + bl_count[bits - 1]) << 1
        next_code[bits] = code
    size = 1 << max_len[0]
    for i in range(size):
        table[i] = -1
    for sym in range(count):
        length = lengths[sym]
        if length == 0:
            continue
        code = next_code[length]
        next_code[length] += 1
        rev = 0
        for j in range(length):
            rev = (rev << 1) | ((code >> j) & 1)
        j = rev
        while j < size:
            table[j] = (sym << 4) | length
            j += 1 << length
    return 0


cdef inline int r_symbol(Reader* r, const int32_t* table, int max_len) except -1:
    cdef int32_t entry
    cdef int length
    if max_len == 0:
        raise DeflateError("symbol read from an empty Huffman code")
    if r.nbits < max_len:
        r_fill(r)
    entry = table[r.acc & ((1ULL << max_len) - 1)]
    if entry < 0:
        raise DeflateError("invalid Huffman code")
    length = entry & 15
    if length > r.nbits:
        raise DeflateError("unexpected end of stream")
    r.acc >>= length
    r.nbits -= length
    return entry >> 4


cdef struct Output:
    uint8_t* buf
    size_t length
    size_t cap


cdef int o_reserve(Output* o, size_t extra) except -1:
    cdef size_t need = o.length + extra
    cdef uint8_t* grown
    if need <= o.cap:
        return 0
    while o.cap < need:
        o.cap = o.cap * 2 + 1024
    grown = <uint8_t*> realloc(o.buf, o.cap)
    if grown == NULL:
        raise MemoryError()
    o.buf = grown
    return 0


cdef int read_dynamic(Reader* r, int32_t* lit_table, int* lit_max,
                      int32_t* dist_table, int* dist_max) except -1:
    cdef uint8_t cl[19]
    cdef uint8_t lengths[316]
    cdef int32_t cl_table[128]
    cdef int cl_max = 0
    cdef int hlit, hdist, hclen, i, total, count, sym, k
    cdef uint8_t value

    hlit = r_bits(r, 5) + 257
    hdist = r_bits(r, 5) + 1
    hclen = r_bits(r, 4) + 4
    if hlit > 286 or hdist > 30:
        raise DeflateError("too many length or distance symbols")
    for i in range(19):
        cl[i] = 0
    for i in range(hclen):
        cl[CLEN_ORDER[i]] = r_bits(r, 3)
    build_table(cl, 19, cl_table, &cl_max)

    total = hlit + hdist
    i = 0
    while i < total:
        sym = r_symbol(r, cl_table, cl_max)
        if sym < 16:
            lengths[i] = sym
            i += 1
            continue
        if sym == 16:
            if i == 0:
                raise DeflateError("repeat with no previous length")
            value = lengths[i - 1]
            count = 3 + r_bits(r, 2)
        elif sym == 17:
            value = 0
            count = 3 + r_bits(r, 3)
        else:
            value = 0
            count = 11 + r_bits(r, 7)
        if i + count > total:
            raise DeflateError("code length repeat overflows table")
        for k in range(count):
            lengths[i + k] = value
        i += count

    if lengths[256] == 0:
        raise DeflateError("missing end-of-block code")
    build_table(lengths, hlit, lit_table, lit_max)
    build_table(lengths + hlit, hdist, dist_table, dist_max)
    return 0


def decompress(const uint8_t[::1] src):
    """Inflate a raw DEFLATE stream; trailing bytes after the final block are an error."""
    cdef Reader r
    cdef Output o
    cdef int32_t* lit_table = <int32_t*> malloc((1 << TABLE_BITS) * sizeof(int32_t))
    cdef int32_t* dist_table = <int32_t*> malloc((1 << TABLE_BITS) * sizeof(int32_t))
    cdef int32_t* fixed_lit = <int32_t*> malloc(512 * sizeof(int32_t))
    cdef int32_t* fixed_dist = <int32_t*> malloc(32 * sizeof(int32_t))
    cdef uint8_t fixed_lengths[288]
    cdef int lit_max = 0, dist_max = 0, fixed_lit_max = 0, fixed_dist_max = 0
    cdef const int32_t* lt
    cdef const int32_t* dt
    cdef int lm, dm, final, btype, sym, lc, dc, length, nlength, i
    cdef Py_ssize_t dist, start, k

    r.data = &src[0] if src.shape[0] > 0 else NULL
    r.n = src.shape[0]
    r.pos = 0
    r.acc = 0
    r.nbits = 0
    o.buf = NULL
    o.length = 0
    o.cap = 0
    try:
        if lit_table == NULL or dist_table == NULL or fixed_lit == NULL or fixed_dist == NULL:
            raise MemoryError()
        o_reserve(&o, 4 * r.n + 256)
        for i in range(288):
            fixed_lengths[i] = hf.FIXED_LITLEN_LENGTHS[i]
        build_table(fixed_lengths, 288, fixed_lit, &fixed_lit_max)
        for i in range(32):
            fixed_lengths[i] = 5
        build_table(fixed_lengths, 32, fixed_dist, &fixed_dist_max)

        while True:
            final = r_bits(&r, 1)
            btype = r_bits(&r, 2)
            if btype == 0:
                # byte-align, then drain whole bytes still held in the bit buffer
                r_bits(&r, r.nbits & 7)
                length = r_bits(&r, 16)
                nlength = r_bits(&r, 16)
                if (length ^ 0xFFFF) != nlength:
                    raise DeflateError("stored block length check failed")
                o_reserve(&o, length)
                while length > 0 and r.nbits >= 8:
                    o.buf[o.length] = r_bits(&r, 8)
                    o.length += 1
                    length -= 1
                if length > 0:
                    if r.pos + length > r.n:
                        raise DeflateError("unexpected end of stream")
                    memcpy(o.buf + o.length, r.data + r.pos, length)
                    o.length += length
                    r.pos += length
            elif btype == 1 or btype == 2:
                if btype == 1:
                    lt = fixed_lit
                    lm = fixed_lit_max
                    dt = fixed_dist
                    dm = fixed_dist_max
                else:
                    read_dynamic(&r, lit_table, &lit_max, dist_table, &dist_max)
                    lt = lit_table
                    lm = lit_max
                    dt = dist_table
                    dm = dist_max
                while True:
                    sym = r_symbol(&r, lt, lm)
                    if sym < 256:
                        if o.length >= o.cap:
                            o_reserve(&o, 1)
                        o.buf[o.length] = sym
                        o.length += 1
                        continue
                    if sym == 256:
                        break
                    lc = sym - 257
                    if lc >= 29:
                        raise DeflateError("invalid length symbol")
                    length = LBASE[lc] + r_bits(&r, LEXTRA[lc])
                    dc = r_symbol(&r, dt, dm)
                    if dc >= 30:
                        raise DeflateError("invalid distance symbol")
                    dist = DBASE[dc] + r_bits(&r, DEXTRA[dc])
                    if dist > <Py_ssize_t> o.length:
                        raise DeflateError("distance too far back")
                    o_reserve(&o, length)
                    start = o.length - dist
                    for k in range(length):
                        o.buf[o.length + k] = o.buf[start + k]
                    o.length += length
            else:
                raise DeflateError("reserved block type")
            if final:
                break

        if r.pos - r.nbits // 8 != r.n:
            raise DeflateError("trailing data after final block")
        return (<char*> o.buf)[:o.length] if o.length else b""
    finally:
        free(lit_table)
        free(dist_table)
        free(fixed_lit)
        free(fixed_dist)
        free(o.buf)
