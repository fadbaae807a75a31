"""Compiled inner loops.

Everything here operates on plain numpy arrays so the same buffers can be
driven from the pure-Python reference layer (``lattice.ColumnStore``) and
from the ensemble/coupling loops.

Column store layout
-------------------
The half-space is cut into 8x8 tiles of columns.  ``keys``/``vals`` form an
open-addressing hash table from a packed tile key to a row of ``tiles``.
Each ``tiles`` cell is a uint16 ``(h << 1) | floor_bit`` where ``[1, h]`` is
the visited interval of the column and ``floor_bit`` records whether the
floor vertex below it has been occupied (used for DF only, not part of Vis).
``meta[0]`` holds the number of allocated tiles.

Random digits
-------------
Each stochastic step consumes one uniform digit in ``[0, 60)``.  Digits are
peeled eight at a time off a 53-bit uniform integer obtained from
``Generator.random()``, with rejection above the largest multiple of 60**8,
so every 5-, 6- and 10-way choice is exactly uniform.  The pure-Python
``rng.RngStream`` implements the same protocol.
"""

import numpy as np
from numba import int64, njit, uint64

TILE_BITS = 3
TILE = 1 << TILE_BITS
TILE_MASK = TILE - 1
TILE_CELLS = TILE * TILE
KEY_OFF = 1 << 30
EMPTY = -1
HMAX = (1 << 15) - 1

TWO53 = 9007199254740992.0
DIGITS_PER_DRAW = 8
DIGIT_SPAN = 60**8
DIGIT_LIMIT = (2**53 // DIGIT_SPAN) * DIGIT_SPAN
_GOLD = uint64(0x9E3779B97F4A7C15)

DONE = 0
GROW = 1
OVERFLOW = 2
VIOLATION = 3

# direction codes: 0:+x 1:-x 2:+y 3:-y 4:+z 5:-z
# rows of DIR_TABLE: 0 visited (6-way), 1 half-space floor (5-way),
# 2 symmetric middle level (4 sides at 1/5, up/down at 1/10)
DIR_TABLE = np.array(
    [[d // 10 for d in range(60)],
     [d // 12 for d in range(60)],
     [(d // 12 if d < 48 else (4 if d < 54 else 5)) for d in range(60)]],
    dtype=np.int64,
)
DX = np.array([1, -1, 0, 0, 0, 0], dtype=np.int64)
DY = np.array([0, 0, 1, -1, 0, 0], dtype=np.int64)
DZ = np.array([0, 0, 0, 0, 1, -1], dtype=np.int64)


# ---------------------------------------------------------------- tile hash

@njit(cache=True, inline="always")
def tile_key(x, y):
    return (((x >> TILE_BITS) + KEY_OFF) << 32) | ((y >> TILE_BITS) + KEY_OFF)


@njit(cache=True, inline="always")
def cell_offset(x, y):
    return (x & TILE_MASK) * TILE + (y & TILE_MASK)


@njit(cache=True, inline="always")
def _slot(key, mask):
    return int64((uint64(key) * _GOLD) >> uint64(32)) & mask


@njit(cache=True)
def tile_lookup(keys, vals, key):
    mask = keys.shape[0] - 1
    i = _slot(key, mask)
    while True:
        k = keys[i]
        if k == key:
            return int64(vals[i])
        if k == EMPTY:
            return -1
        i = (i + 1) & mask


@njit(cache=True)
def tile_insert(keys, vals, key, tid):
    mask = keys.shape[0] - 1
    i = _slot(key, mask)
    while keys[i] != EMPTY:
        i = (i + 1) & mask
    keys[i] = key
    vals[i] = tid


@njit(cache=True)
def tile_fetch(keys, vals, meta, key):
    """Tile id for ``key``, allocating a zeroed tile if absent.

    Caller guarantees capacity (see ``has_room``).
    """
    tid = tile_lookup(keys, vals, key)
    if tid < 0:
        tid = meta[0]
        meta[0] = tid + 1
        tile_insert(keys, vals, key, tid)
    return tid


@njit(cache=True, inline="always")
def has_room(keys, tiles, meta, extra):
    n = meta[0] + extra
    return n <= tiles.shape[0] and 2 * n <= keys.shape[0]


@njit(cache=True)
def rehash(old_keys, old_vals, new_keys, new_vals):
    for i in range(old_keys.shape[0]):
        k = old_keys[i]
        if k != EMPTY:
            tile_insert(new_keys, new_vals, k, old_vals[i])


@njit(cache=True)
def column_cell(keys, vals, tiles, x, y):
    tid = tile_lookup(keys, vals, tile_key(x, y))
    if tid < 0:
        return 0
    return int64(tiles[tid, cell_offset(x, y)])


@njit(cache=True)
def column_set(keys, vals, tiles, meta, x, y, cell):
    tid = tile_fetch(keys, vals, meta, tile_key(x, y))
    tiles[tid, cell_offset(x, y)] = cell


@njit(cache=True)
def total_height(tiles, meta):
    s = 0
    for i in range(meta[0]):
        for j in range(TILE_CELLS):
            s += tiles[i, j] >> 1
    return s


@njit(cache=True)
def dump_columns(keys, vals, tiles):
    """Rows ``(x, y, h, floor_bit)`` for every nonzero cell."""
    n = 0
    for i in range(keys.shape[0]):
        if keys[i] != EMPTY:
            tid = vals[i]
            for j in range(TILE_CELLS):
                if tiles[tid, j] != 0:
                    n += 1
    out = np.empty((n, 4), dtype=np.int64)
    r = 0
    for i in range(keys.shape[0]):
        k = keys[i]
        if k != EMPTY:
            tid = vals[i]
            tx = (k >> 32) - KEY_OFF
            ty = (k & 0xFFFFFFFF) - KEY_OFF
            for j in range(TILE_CELLS):
                c = tiles[tid, j]
                if c != 0:
                    out[r, 0] = (tx << TILE_BITS) + j // TILE
                    out[r, 1] = (ty << TILE_BITS) + j % TILE
                    out[r, 2] = c >> 1
                    out[r, 3] = c & 1
                    r += 1
    return out


# ------------------------------------------------------------------ digits

@njit(cache=True, inline="always")
def _refill(g):
    while True:
        k = int64(g.random() * TWO53)
        if k < DIGIT_LIMIT:
            return k


# ------------------------------------------------------------ walk kernel
#
# state slots
S_T, S_X, S_Y, S_Z, S_DESC, S_F, S_NNEW, S_DF, S_DIG, S_ND, S_CP, \
    S_CPH, S_CL, S_CTIN, S_CTOUT, S_TARG = range(16)
# per-target slots follow S_TARG: visits[j], first_hit[j], window[j]
# output columns per checkpoint
(O_N, O_DF, O_F, O_Z, O_NNEW, O_M5, O_L) = range(7)
N_FIXED_OUT = 7


def _make_walk_kernel(symmetric):
    floor_row = 2 if symmetric else 1

    def walk_kernel(g, state, horizons, targets, cyl_r, window,
                    keys, vals, tiles, meta, out, DIR, DX, DY, DZ):
        nt = targets.shape[0]
        nh = horizons.shape[0]
        tmax = horizons[nh - 1]
        t = state[S_T]
        x = state[S_X]
        y = state[S_Y]
        z = state[S_Z]
        desc = state[S_DESC]
        F = state[S_F]
        nnew = state[S_NNEW]
        DF = state[S_DF]
        digits = state[S_DIG]
        nd = state[S_ND]
        cp = state[S_CP]
        cph = state[S_CPH]
        cl = state[S_CL]
        ctin = state[S_CTIN]
        ctout = state[S_CTOUT]
        v0 = state[S_TARG]
        r2 = cyl_r * cyl_r
        R2 = 4 * r2
        tx0 = targets[0, 0]
        ty0 = targets[0, 1]
        tz0 = targets[0, 2]
        extra = nt > 1 or window > 0
        tcap = tiles.shape[0]
        kcap = keys.shape[0]
        nexth = horizons[cp] if cp < nh else -1
        status = DONE

        if not has_room(keys, tiles, meta, 1):
            return GROW
        ck = tile_key(x, y)
        tid = tile_fetch(keys, vals, meta, ck)
        off = cell_offset(x, y)
        curh = int64(tiles[tid, off]) >> 1
        # resuming after a GROW interrupted the tail of a step
        az = (z if z >= 0 else -z) if symmetric else z
        if desc == 0 and az > curh:
            desc = az

        while True:
            if symmetric:
                az = z if z >= 0 else -z
            else:
                az = z
            # observe R(t); target visits count times u <= t
            v0 += int64(x == tx0) & int64(y == ty0) & int64(az == tz0)
            if extra:
                state[S_TARG] = v0
                for j in range(1, nt):
                    state[S_TARG + j] += (int64(x == targets[j, 0])
                                          & int64(y == targets[j, 1])
                                          & int64(az == targets[j, 2]))
                if window > 0:
                    for j in range(nt):
                        fh = state[S_TARG + nt + j]
                        if fh < 0 and state[S_TARG + j] > 0:
                            fh = t
                            state[S_TARG + nt + j] = t
                        if fh >= 0 and t == fh + window:
                            state[S_TARG + 2 * nt + j] = state[S_TARG + j]
            # checkpoint; the counters below count times u < t
            if t == nexth:
                state[S_TARG] = v0
                for j in range(nt):
                    out[cp, j] = state[S_TARG + j]
                out[cp, nt + O_N] = nnew + DF
                out[cp, nt + O_DF] = DF
                out[cp, nt + O_F] = F
                out[cp, nt + O_Z] = az
                out[cp, nt + O_NNEW] = nnew
                out[cp, nt + O_M5] = 5 * az + 5 * nnew - F
                out[cp, nt + O_L] = cl
                cp += 1
                nexth = horizons[cp] if cp < nh else -1
            if t >= tmax:
                break
            # account R(t)
            fl = int64(z == 0)
            F += fl
            c = int64(tiles[tid, off])
            nb = fl & ~c & 1
            DF += nb
            tiles[tid, off] = c | nb
            if cyl_r > 0:
                d2 = x * x + y * y
                if cph == 0:
                    if t >= ctout and d2 <= r2:
                        cl += 1
                        cph = 1
                        ctin = t
                elif t > ctin and d2 > R2:
                    cph = 0
                    ctout = t
            t += 1
            # step
            if desc > 0:
                nnew += 1
                if symmetric:
                    if z > 0:
                        z -= 1
                    else:
                        z += 1
                    az = z if z >= 0 else -z
                else:
                    z -= 1
                    az = z
                if az == curh:
                    tiles[tid, off] = int64(tiles[tid, off] & 1) | (desc << 1)
                    curh = desc
                    desc = 0
                continue
            if nd == 0:
                digits = _refill(g)
                nd = 8
            d = digits % 60
            digits //= 60
            nd -= 1
            dr = DIR[fl * floor_row, d]
            x += DX[dr]
            y += DY[dr]
            z += DZ[dr]
            nk = tile_key(x, y)
            if nk != ck:
                tid = tile_lookup(keys, vals, nk)
                if tid < 0:
                    nti = meta[0] + 1
                    if nti > tcap or 2 * nti > kcap:
                        status = GROW
                        break
                    tid = nti - 1
                    meta[0] = nti
                    tile_insert(keys, vals, nk, tid)
                ck = nk
            off = cell_offset(x, y)
            curh = int64(tiles[tid, off]) >> 1
            if symmetric:
                az = z if z >= 0 else -z
            else:
                az = z
            if az > curh:
                if az > HMAX:
                    status = OVERFLOW
                    break
                desc = az

        state[S_TARG] = v0
        state[S_T] = t
        state[S_X] = x
        state[S_Y] = y
        state[S_Z] = z
        state[S_DESC] = desc
        state[S_F] = F
        state[S_NNEW] = nnew
        state[S_DF] = DF
        state[S_DIG] = digits
        state[S_ND] = nd
        state[S_CP] = cp
        state[S_CPH] = cph
        state[S_CL] = cl
        state[S_CTIN] = ctin
        state[S_CTOUT] = ctout
        return status

    walk_kernel.__name__ = "walk_kernel_sym" if symmetric else "walk_kernel_half"
    walk_kernel.__qualname__ = walk_kernel.__name__
    return njit(cache=True, nogil=True)(walk_kernel)


# Advance one walk until ``horizons[-1]``.  ``out[k, j]`` for ``j < nt`` is
# V(horizons[k]; targets[j]); the remaining columns follow the O_* layout
# shifted by ``nt``.  Returns DONE, GROW (caller enlarges the store and calls
# again) or OVERFLOW.
walk_kernel_half = _make_walk_kernel(False)
walk_kernel_sym = _make_walk_kernel(True)


# ----------------------------------------------------- drift (p < 1) kernel
#
# Visited sets are no longer downward-closed, so sites go into a plain hash
# set of packed keys.  Floor points are stored with z = 0 (for DF only).

SITE_OFF = 1 << 20
SITE_LIM = (1 << 20) - 1


@njit(cache=True, inline="always")
def site_key(x, y, z):
    return ((x + SITE_OFF) << 42) | ((y + SITE_OFF) << 21) | z


@njit(cache=True)
def set_contains(keys, key):
    mask = keys.shape[0] - 1
    i = _slot(key, mask)
    while True:
        k = keys[i]
        if k == key:
            return True
        if k == EMPTY:
            return False
        i = (i + 1) & mask


@njit(cache=True)
def set_add(keys, meta, key):
    mask = keys.shape[0] - 1
    i = _slot(key, mask)
    while True:
        k = keys[i]
        if k == key:
            return False
        if k == EMPTY:
            keys[i] = key
            meta[0] += 1
            return True
        i = (i + 1) & mask


@njit(cache=True)
def set_rehash(old_keys, new_keys):
    mask = new_keys.shape[0] - 1
    for i in range(old_keys.shape[0]):
        k = old_keys[i]
        if k != EMPTY:
            j = _slot(k, mask)
            while new_keys[j] != EMPTY:
                j = (j + 1) & mask
            new_keys[j] = k


@njit(cache=True, nogil=True)
def drift_kernel(g, state, horizons, targets, p, keys, meta, out,
                 DIR, DX, DY, DZ):
    """Half-space walk whose excited step goes down only with probability p.

    At a new vertex a uniform decides: below ``p`` the walk steps down,
    otherwise it takes a simple-random-walk step.  Same output layout as
    ``walk_kernel`` (no cylinder / window support).
    """
    nt = targets.shape[0]
    nh = horizons.shape[0]
    tmax = horizons[nh - 1]
    t = state[S_T]
    x = state[S_X]
    y = state[S_Y]
    z = state[S_Z]
    F = state[S_F]
    nnew = state[S_NNEW]
    DF = state[S_DF]
    digits = state[S_DIG]
    nd = state[S_ND]
    cp = state[S_CP]
    status = DONE
    while True:
        if 2 * (meta[0] + 2) > keys.shape[0]:
            status = GROW
            break
        for j in range(nt):
            state[S_TARG + j] += (int64(x == targets[j, 0])
                                  & int64(y == targets[j, 1])
                                  & int64(z == targets[j, 2]))
        while cp < nh and horizons[cp] == t:
            for j in range(nt):
                out[cp, j] = state[S_TARG + j]
            out[cp, nt + O_N] = nnew + DF
            out[cp, nt + O_DF] = DF
            out[cp, nt + O_F] = F
            out[cp, nt + O_Z] = z
            out[cp, nt + O_NNEW] = nnew
            out[cp, nt + O_M5] = 5 * z + 5 * nnew - F
            out[cp, nt + O_L] = 0
            cp += 1
        if t >= tmax:
            break
        if x >= SITE_LIM or -x >= SITE_LIM or y >= SITE_LIM or -y >= SITE_LIM \
                or z >= (1 << 21) - 1:
            status = OVERFLOW
            break
        key = site_key(x, y, z)
        row = 0
        down = False
        if z == 0:
            F += 1
            if set_add(keys, meta, key):
                DF += 1
            row = 1
        elif set_add(keys, meta, key):
            nnew += 1
            if g.random() < p:
                down = True
        t += 1
        if down:
            z -= 1
            continue
        if nd == 0:
            digits = _refill(g)
            nd = 8
        d = digits % 60
        digits //= 60
        nd -= 1
        dr = DIR[row, d]
        x += DX[dr]
        y += DY[dr]
        z += DZ[dr]
    state[S_T] = t
    state[S_X] = x
    state[S_Y] = y
    state[S_Z] = z
    state[S_F] = F
    state[S_NNEW] = nnew
    state[S_DF] = DF
    state[S_DIG] = digits
    state[S_ND] = nd
    state[S_CP] = cp
    return status


# -------------------------------------------------------- coupling kernel
#
# Two half-space walkers R (row 0) and S (row 1), each with its own column
# store.  Walker rows hold the fields below; ``cs`` holds the shared slots.
W_X, W_Y, W_Z, W_DESC, W_CURH, W_TID, W_CK, W_OFF, W_T, W_WAIT, W_V = range(11)
N_WFIELDS = 11
C_TAU, C_DIG, C_ND, C_BAD, C_CODE, C_TAUR, C_ZR_END, C_ZS_END, C_VR, C_VS = range(10)
N_CSLOTS = 10
K_FLOOR, K_VISITED, K_NEW = 0, 1, 2

# violation codes reported in cs[C_CODE]
V_XY, V_HEIGHT_WAIT, V_ORDER, V_SUBSET, V_FORBIDDEN, V_FLOOR, V_CLOCK = range(1, 8)


@njit(cache=True)
def _cw_locate(w, i, keys, vals, tiles, meta):
    x = w[i, W_X]
    y = w[i, W_Y]
    nk = tile_key(x, y)
    if nk != w[i, W_CK]:
        w[i, W_TID] = tile_fetch(keys, vals, meta, nk)
        w[i, W_CK] = nk
    off = cell_offset(x, y)
    w[i, W_OFF] = off
    w[i, W_CURH] = int64(tiles[w[i, W_TID], off]) >> 1
    z = w[i, W_Z]
    if z > w[i, W_CURH] and w[i, W_DESC] == 0:
        w[i, W_DESC] = z


@njit(cache=True, nogil=True)
def couple_kernel(g, cs, w, target, tmax, checked,
                  keysR, valsR, tilesR, metaR, keysS, valsS, tilesS, metaS,
                  DIR, DX, DY, DZ):
    """Run the downward coupling of R and S until both clocks reach ``tmax``.

    With ``checked`` every coupling step (and the final configuration) is
    tested against the dominance invariants; the first failure stops the run
    with status VIOLATION and its code in ``cs[C_CODE]``.  ``cs[C_BAD]``
    must hold the number of columns where R's height exceeds S's.
    """
    vx = target[0]
    vy = target[1]
    vz = target[2]
    digits = cs[C_DIG]
    nd = cs[C_ND]
    tau = cs[C_TAU]
    bad = cs[C_BAD]
    status = DONE
    if not (has_room(keysR, tilesR, metaR, 1) and has_room(keysS, tilesS, metaS, 1)):
        return GROW
    _cw_locate(w, 0, keysR, valsR, tilesR, metaR)
    _cw_locate(w, 1, keysS, valsS, tilesS, metaS)
    # largest tile count that still leaves room for one more allocation
    capR = min(tilesR.shape[0], keysR.shape[0] // 2)
    capS = min(tilesS.shape[0], keysS.shape[0] // 2)
    while True:
        zR = w[0, W_Z]
        zS = w[1, W_Z]
        kR = K_FLOOR if zR == 0 else (K_NEW if zR > w[0, W_CURH] else K_VISITED)
        kS = K_FLOOR if zS == 0 else (K_NEW if zS > w[1, W_CURH] else K_VISITED)
        if checked:
            code = 0
            if w[0, W_X] != w[1, W_X] or w[0, W_Y] != w[1, W_Y]:
                code = V_XY
            elif zR - w[0, W_WAIT] != zS - w[1, W_WAIT]:
                code = V_HEIGHT_WAIT
            elif zR > zS:
                code = V_ORDER
            elif kS != K_NEW and (w[1, W_DESC] != 0 or bad != 0
                                  or w[0, W_DESC] > w[1, W_CURH]):
                code = V_SUBSET
            elif kS == K_NEW and kR == K_VISITED and zR == zS:
                code = V_FORBIDDEN
            elif zS == 0 and zR != 0:
                code = V_FLOOR
            elif tau != w[0, W_T] + w[0, W_WAIT] or tau != w[1, W_T] + w[1, W_WAIT]:
                code = V_CLOCK
            if code != 0:
                cs[C_CODE] = code
                status = VIOLATION
                break
        if w[0, W_T] >= tmax and w[1, W_T] >= tmax:
            break
        if metaR[0] >= capR or metaS[0] >= capS:
            status = GROW
            break
        hR0 = w[0, W_CURH]
        hS0 = w[1, W_CURH]
        # act[i]: direction code for walker i, or -1 if it waits
        dr = 5
        if (kR == kS and kR != K_NEW) or (kR != K_NEW and kS != K_NEW):
            if nd == 0:
                digits = _refill(g)
                nd = 8
            d = digits % 60
            digits //= 60
            nd -= 1
            dr = DIR[1 - kR, d] if kR == kS else DIR[0, d]
        actR = dr
        actS = dr
        if kR != kS:
            if kR == K_NEW:
                actS = -1
            elif kS == K_NEW:
                actR = -1
            elif dr == 5:
                # Visited walker moved down; the Floor walker waits
                if kR == K_FLOOR:
                    actR = -1
                else:
                    actS = -1
        commit = False
        over = False
        for i in range(2):
            a = actR if i == 0 else actS
            if a < 0:
                w[i, W_WAIT] += 1
                continue
            tiles = tilesR if i == 0 else tilesS
            z = w[i, W_Z]
            curh = w[i, W_CURH]
            if z > 0 and z > curh:
                # excited step, necessarily down
                z -= 1
                if z == curh:
                    tid = w[i, W_TID]
                    off = w[i, W_OFF]
                    tiles[tid, off] = int64(tiles[tid, off] & 1) | (w[i, W_DESC] << 1)
                    w[i, W_CURH] = w[i, W_DESC]
                    w[i, W_DESC] = 0
                    commit = True
            else:
                x = w[i, W_X] + DX[a]
                y = w[i, W_Y] + DY[a]
                z += DZ[a]
                w[i, W_X] = x
                w[i, W_Y] = y
                if DZ[a] == 0:
                    nk = tile_key(x, y)
                    if nk != w[i, W_CK]:
                        if i == 0:
                            w[i, W_TID] = tile_fetch(keysR, valsR, metaR, nk)
                        else:
                            w[i, W_TID] = tile_fetch(keysS, valsS, metaS, nk)
                        w[i, W_CK] = nk
                    off = cell_offset(x, y)
                    w[i, W_OFF] = off
                    curh = int64(tiles[w[i, W_TID], off]) >> 1
                    w[i, W_CURH] = curh
                if z > curh:
                    w[i, W_DESC] = z
                    if z > HMAX:
                        over = True
            w[i, W_Z] = z
            t = w[i, W_T] + 1
            w[i, W_T] = t
            if t <= tmax and z == vz and w[i, W_X] == vx and w[i, W_Y] == vy:
                w[i, W_V] += 1
        tau += 1
        if over:
            status = OVERFLOW
            break
        if commit:
            # commits only happen on downward moves, so both walkers are
            # still in the column whose heights were read before the step
            bad += int64(w[0, W_CURH] > w[1, W_CURH]) - int64(hR0 > hS0)
        if w[0, W_T] == tmax and cs[C_TAUR] < 0:
            cs[C_TAUR] = tau
            cs[C_ZR_END] = w[0, W_Z]
            cs[C_ZS_END] = w[1, W_Z]
    cs[C_TAU] = tau
    cs[C_DIG] = digits
    cs[C_ND] = nd
    cs[C_BAD] = bad
    cs[C_VR] = w[0, W_V]
    cs[C_VS] = w[1, W_V]
    return status
