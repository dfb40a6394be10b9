"""Numba-compiled inner loops.

Everything here operates on plain float64 arrays; the public modules wrap
these cores behind the measure / grid types.

The atom-reduction pipeline (deduplicate within tolerance, absorb
numerically-negligible weights, greedily merge closest adjacent pairs down
to a budget) is fused into single jitted calls because it runs once per
solver step.  The greedy merge exploits a monotonicity property: merged
atoms sit inside their parents' span, so newly created gaps are never
smaller than the gap just merged, and the popped gap sequence is
non-decreasing.  That allows a bucket (monotone priority) queue keyed on the
float bit pattern for large inputs; small inputs use a plain binary heap.
Ties in the gap are broken at the lower position, which along the linked
list coincides with the lower node id.
"""

import numpy as np
from numba import njit

_BUCKET_SHIFT = np.uint64(45)
_N_BUCKETS = 1 << 18  # top 18 value bits of a positive float64
_HEAP_CUTOFF = 4096


@njit(cache=True)
def _merge_heap(pos, w, budget, start_count):
    """Greedy closest-pair merge via a lazy-deletion binary heap.
    pos strictly increasing (already deduplicated), w >= 0, arrays writable.
    Returns (count, displacement, gap_sum); merged result is the alive
    entries marked by w[i] >= 0 with nxt-chain intact."""
    n = pos.size
    nxt = np.empty(n, np.int32)
    prv = np.empty(n, np.int32)
    alive = np.ones(n, np.bool_)
    for i in range(n):
        nxt[i] = i + 1 if i + 1 < n else -1
        prv[i] = i - 1
    cap = n + 2 * (n - budget) + 4
    hkey = np.empty(cap)
    hid = np.empty(cap, np.int32)
    hn = n - 1
    for i in range(n - 1):
        hkey[i] = pos[i + 1] - pos[i]
        hid[i] = i
    for s in range(hn // 2 - 1, -1, -1):
        kk = hkey[s]
        ii = hid[s]
        k = s
        while True:
            l = 2 * k + 1
            if l >= hn:
                break
            r = l + 1
            m = l
            if r < hn and (hkey[r] < hkey[l] or (hkey[r] == hkey[l] and hid[r] < hid[l])):
                m = r
            if hkey[m] < kk or (hkey[m] == kk and hid[m] < ii):
                hkey[k] = hkey[m]
                hid[k] = hid[m]
                k = m
            else:
                break
        hkey[k] = kk
        hid[k] = ii
    count = start_count
    disp = 0.0
    gapsum = 0.0
    while count > budget and hn > 0:
        g = hkey[0]
        i = hid[0]
        hn -= 1
        kk = hkey[hn]
        ii = hid[hn]
        k = 0
        while True:
            l = 2 * k + 1
            if l >= hn:
                break
            r = l + 1
            m = l
            if r < hn and (hkey[r] < hkey[l] or (hkey[r] == hkey[l] and hid[r] < hid[l])):
                m = r
            if hkey[m] < kk or (hkey[m] == kk and hid[m] < ii):
                hkey[k] = hkey[m]
                hid[k] = hid[m]
                k = m
            else:
                break
        hkey[k] = kk
        hid[k] = ii
        if not alive[i]:
            continue
        j = nxt[i]
        if j == -1:
            continue
        if pos[j] - pos[i] != g:
            continue
        wi = w[i]
        wj = w[j]
        tot = wi + wj
        if tot > 0.0:
            pos[i] = (wi * pos[i] + wj * pos[j]) / tot
            disp += 2.0 * wi * wj / tot * g
        gapsum += g
        w[i] = tot
        alive[j] = False
        nj = nxt[j]
        nxt[i] = nj
        if nj != -1:
            prv[nj] = i
        count -= 1
        left = prv[i]
        if left != -1:
            gk = pos[i] - pos[left]
            k = hn
            hn += 1
            while k > 0:
                par = (k - 1) >> 1
                if gk < hkey[par] or (gk == hkey[par] and left < hid[par]):
                    hkey[k] = hkey[par]
                    hid[k] = hid[par]
                    k = par
                else:
                    break
            hkey[k] = gk
            hid[k] = left
        if nj != -1:
            gk = pos[nj] - pos[i]
            k = hn
            hn += 1
            while k > 0:
                par = (k - 1) >> 1
                if gk < hkey[par] or (gk == hkey[par] and i < hid[par]):
                    hkey[k] = hkey[par]
                    hid[k] = hid[par]
                    k = par
                else:
                    break
            hkey[k] = gk
            hid[k] = i
    # compact alive atoms to the front
    k = 0
    for i in range(n):
        if alive[i]:
            pos[k] = pos[i]
            w[k] = w[i]
            k += 1
    return k, disp, gapsum


@njit(cache=True)
def _merge_bucket(pos, w, budget, start_count):
    """Same contract as _merge_heap but with a monotone bucket queue; faster
    for large inputs."""
    n = pos.size
    nxt = np.empty(n, np.int32)
    prv = np.empty(n, np.int32)
    alive = np.ones(n, np.bool_)
    for i in range(n):
        nxt[i] = i + 1 if i + 1 < n else -1
        prv[i] = i - 1
    heads = np.full(_N_BUCKETS, -1, np.int32)
    cap = n + 2 * (n - budget) + 8
    egap = np.empty(cap)
    eid = np.empty(cap, np.int32)
    enxt = np.empty(cap, np.int32)
    ne = 0
    fbuf = np.empty(1, np.float64)
    ubuf = fbuf.view(np.uint64)
    min_b = _N_BUCKETS
    for i in range(n - 1):
        g = pos[i + 1] - pos[i]
        fbuf[0] = g
        b = np.int64(ubuf[0] >> _BUCKET_SHIFT)
        egap[ne] = g
        eid[ne] = i
        enxt[ne] = heads[b]
        heads[b] = ne
        ne += 1
        if b < min_b:
            min_b = b
    hkey = np.empty(cap)
    hid = np.empty(cap, np.int32)
    hn = 0
    count = start_count
    disp = 0.0
    gapsum = 0.0
    cur_b = min_b
    while count > budget:
        while hn == 0:
            while cur_b < _N_BUCKETS and heads[cur_b] == -1:
                cur_b += 1
            if cur_b >= _N_BUCKETS:
                break
            e = heads[cur_b]
            heads[cur_b] = -1
            while e != -1:
                gk = egap[e]
                ik = eid[e]
                k = hn
                hn += 1
                while k > 0:
                    par = (k - 1) >> 1
                    if gk < hkey[par] or (gk == hkey[par] and ik < hid[par]):
                        hkey[k] = hkey[par]
                        hid[k] = hid[par]
                        k = par
                    else:
                        break
                hkey[k] = gk
                hid[k] = ik
                e = enxt[e]
        if hn == 0:
            break
        g = hkey[0]
        i = hid[0]
        hn -= 1
        kk = hkey[hn]
        ii = hid[hn]
        k = 0
        while True:
            l = 2 * k + 1
            if l >= hn:
                break
            r = l + 1
            m = l
            if r < hn and (hkey[r] < hkey[l] or (hkey[r] == hkey[l] and hid[r] < hid[l])):
                m = r
            if hkey[m] < kk or (hkey[m] == kk and hid[m] < ii):
                hkey[k] = hkey[m]
                hid[k] = hid[m]
                k = m
            else:
                break
        hkey[k] = kk
        hid[k] = ii
        if not alive[i]:
            continue
        j = nxt[i]
        if j == -1:
            continue
        if pos[j] - pos[i] != g:
            continue
        wi = w[i]
        wj = w[j]
        tot = wi + wj
        if tot > 0.0:
            pos[i] = (wi * pos[i] + wj * pos[j]) / tot
            disp += 2.0 * wi * wj / tot * g
        gapsum += g
        w[i] = tot
        alive[j] = False
        nj = nxt[j]
        nxt[i] = nj
        if nj != -1:
            prv[nj] = i
        count -= 1
        left = prv[i]
        if left != -1:
            gk = pos[i] - pos[left]
            fbuf[0] = gk
            b = np.int64(ubuf[0] >> _BUCKET_SHIFT)
            if b <= cur_b:
                k = hn
                hn += 1
                while k > 0:
                    par = (k - 1) >> 1
                    if gk < hkey[par] or (gk == hkey[par] and left < hid[par]):
                        hkey[k] = hkey[par]
                        hid[k] = hid[par]
                        k = par
                    else:
                        break
                hkey[k] = gk
                hid[k] = left
            else:
                egap[ne] = gk
                eid[ne] = left
                enxt[ne] = heads[b]
                heads[b] = ne
                ne += 1
        if nj != -1:
            gk = pos[nj] - pos[i]
            fbuf[0] = gk
            b = np.int64(ubuf[0] >> _BUCKET_SHIFT)
            if b <= cur_b:
                k = hn
                hn += 1
                while k > 0:
                    par = (k - 1) >> 1
                    if gk < hkey[par] or (gk == hkey[par] and i < hid[par]):
                        hkey[k] = hkey[par]
                        hid[k] = hid[par]
                        k = par
                    else:
                        break
                hkey[k] = gk
                hid[k] = i
            else:
                egap[ne] = gk
                eid[ne] = i
                enxt[ne] = heads[b]
                heads[b] = ne
                ne += 1
        if ne + 2 > cap:
            break  # unreachable by construction; guards corrupted input
    k = 0
    for i in range(n):
        if alive[i]:
            pos[k] = pos[i]
            w[k] = w[i]
            k += 1
    return k, disp, gapsum


@njit(cache=True)
def reduce_sorted_atoms(pos_in, w_in, tol, floor_abs, budget):
    """Fused atom-reduction pipeline for sorted nonnegative input.

    1. merge runs of positions closer than ``tol`` (coincident always merge)
       at the mass-weighted mean, dropping zero weights;
    2. if still over budget, absorb atoms with weight < ``floor_abs`` into
       their nearest surviving neighbor (ties to the left);
    3. if still over budget, greedy closest-adjacent-pair merging.

    Every stage preserves total mass and first moment exactly in real
    arithmetic.  Returns (pos, w, w1_displacement, merged_gap_sum) where the
    displacement covers stages 2 and 3.
    """
    n = pos_in.size
    pos = np.empty(n)
    w = np.empty(n)
    # stage 1: tolerance dedupe (sequential groups on sorted input)
    k = -1
    group_wp = 0.0
    group_w = 0.0
    group_anchor = 0.0
    for i in range(n):
        p = pos_in[i]
        wi = w_in[i]
        if k >= 0:
            gap = p - group_anchor
            if gap < tol or gap == 0.0:
                group_w += wi
                group_wp += wi * p
                group_anchor = p
                if group_w > 0.0:
                    pos[k] = group_wp / group_w
                w[k] = group_w
                continue
        k += 1
        group_w = wi
        group_wp = wi * p
        group_anchor = p
        pos[k] = p
        w[k] = wi
    count = k + 1
    # drop zero weights
    k = 0
    for i in range(count):
        if w[i] != 0.0:
            pos[k] = pos[i]
            w[k] = w[i]
            k += 1
    count = k
    disp = 0.0
    gapsum = 0.0
    if count <= budget:
        return pos[:count].copy(), w[:count].copy(), disp, gapsum
    # stage 2: absorb negligible weights into nearest neighbor
    if floor_abs > 0.0:
        n_tiny = 0
        for i in range(count):
            if w[i] < floor_abs:
                n_tiny += 1
        if 0 < n_tiny < count:
            # fold tiny atoms into nearest big neighbor (batch, then reposition)
            addw = np.zeros(count)
            addwp = np.zeros(count)
            dust_cost = np.zeros(count)
            prev_big = np.empty(count, np.int32)
            last = -1
            for i in range(count):
                prev_big[i] = last
                if w[i] >= floor_abs:
                    last = i
            nextb = -1
            for i in range(count - 1, -1, -1):
                if w[i] >= floor_abs:
                    nextb = i
                else:
                    lb = prev_big[i]
                    if lb == -1:
                        tgt = nextb
                    elif nextb == -1:
                        tgt = lb
                    elif pos[i] - pos[lb] <= pos[nextb] - pos[i]:
                        tgt = lb
                    else:
                        tgt = nextb
                    addw[tgt] += w[i]
                    addwp[tgt] += w[i] * pos[i]
                    dust_cost[tgt] += w[i] * abs(pos[i] - pos[tgt])
            k = 0
            for i in range(count):
                if w[i] >= floor_abs:
                    tot = w[i] + addw[i]
                    if addw[i] > 0.0 and tot > 0.0:
                        newp = (w[i] * pos[i] + addwp[i]) / tot
                        # W1 cost bound: dust moved to the old anchor plus the
                        # whole merged atom shifting to its new mean
                        disp += dust_cost[i] + tot * abs(newp - pos[i])
                        pos[k] = newp
                    else:
                        pos[k] = pos[i]
                    w[k] = tot
                    k += 1
            count = k
    if count <= budget:
        return pos[:count].copy(), w[:count].copy(), disp, gapsum
    # stage 3: greedy pair merging
    p3 = pos[:count].copy()
    w3 = w[:count].copy()
    if count <= _HEAP_CUTOFF:
        count, d3, g3 = _merge_heap(p3, w3, budget, count)
    else:
        count, d3, g3 = _merge_bucket(p3, w3, budget, count)
    return p3[:count].copy(), w3[:count].copy(), disp + d3, gapsum + g3


@njit(cache=True)
def greedy_pair_merge(pos, w, budget):
    """Greedy closest-adjacent-pair merging only (no dedupe, no floor).
    pos strictly increasing, w nonnegative.
    Returns (pos_out, w_out, w1_displacement, merged_gap_sum)."""
    n = pos.size
    if n <= budget:
        return pos.copy(), w.copy(), 0.0, 0.0
    p = pos.copy()
    ww = w.copy()
    if n <= _HEAP_CUTOFF:
        count, d, g = _merge_heap(p, ww, budget, n)
    else:
        count, d, g = _merge_bucket(p, ww, budget, n)
    return p[:count].copy(), ww[:count].copy(), d, g


@njit(cache=True)
def grid_transfer_core(u, v, dx, term_w, term_a, margin):
    """Midpoint-in-sigma quadrature of the pairwise transfer integral.

    out[i] = sum_t w_t * sum_k u(x_i - (1-a_t) s_k) v(x_i + a_t s_k) * dx
    with s_k the midpoints of [-D, D] at spacing dx (D = grid diameter) and
    linear interpolation between nodes (zero outside).  Output positions that
    fall outside the grid (up to ``margin`` nodes each side) are accumulated
    into the returned lost-mass scalar instead of the density array.
    """
    n = u.size
    out = np.zeros(n)
    lost = 0.0
    nsig = 2 * (n - 1)
    if nsig <= 0:
        return out, lost
    D = (n - 1) * dx
    for t in range(term_w.size):
        wt = term_w[t]
        a = term_a[t]
        ca = 1.0 - a
        for k in range(nsig):
            sig = -D + (k + 0.5) * dx
            su = ca * sig / dx
            sv = -a * sig / dx
            base_u = np.floor(-su)
            ru = (-su) - base_u
            ou = np.int64(base_u)
            base_v = np.floor(-sv)
            rv = (-sv) - base_v
            ov = np.int64(base_v)
            lo = -margin
            hi = n + margin
            if -ou - 1 > lo:
                lo = -ou - 1
            if -ov - 1 > lo:
                lo = -ov - 1
            if n - ou < hi:
                hi = n - ou
            if n - ov < hi:
                hi = n - ov
            scale = wt * dx
            for i in range(lo, hi):
                ju = i + ou
                uval = 0.0
                if 0 <= ju < n:
                    uval += (1.0 - ru) * u[ju]
                if 0 <= ju + 1 < n:
                    uval += ru * u[ju + 1]
                if uval == 0.0:
                    continue
                jv = i + ov
                vval = 0.0
                if 0 <= jv < n:
                    vval += (1.0 - rv) * v[jv]
                if 0 <= jv + 1 < n:
                    vval += rv * v[jv + 1]
                val = scale * uval * vval
                if 0 <= i < n:
                    out[i] += val
                else:
                    lost += val * dx
    return out, lost
