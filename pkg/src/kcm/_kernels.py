"""Compiled core of the event-driven graphical construction.

Randomness is counter-based: the ``k``-th ring of a site with 64-bit key
``K`` uses ``uniform(K, 2k)`` for its exponential waiting time and
``uniform(K, 2k + 1)`` for its coin, so a site's ring/coin sequence is a
pure function of its key and never of simulation order.
"""
import numpy as np
from numba import config as _nb_config
from numba import njit, prange, uint64

# Skip TBB (warns when the installed version is too old); results do not
# depend on the threading layer.
_nb_config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

GOLDEN = uint64(0x9E3779B97F4A7C15)
MUL1 = uint64(0xBF58476D1CE4E5B9)
MUL2 = uint64(0x94D049BB133111EB)
INIT_SALT = uint64(0xD1B54A32D192ED03)
INV53 = 1.0 / 9007199254740992.0
SWEEP_CHUNK = 8.0


@njit(cache=True, inline="always")
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> uint64(30))) * MUL1
    z = (z ^ (z >> uint64(27))) * MUL2
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform on the open interval (0, 1) with 53 random bits."""
    z = mix64(key ^ mix64(uint64(counter) * GOLDEN + uint64(1)))
    return (float(z >> uint64(11)) + 0.5) * INV53


@njit(cache=True)
def site_keys(seed, coords):
    """Per-site keys from (seed, x_1, ..., x_d)."""
    m, d = coords.shape
    out = np.empty(m, dtype=np.uint64)
    base = mix64(uint64(seed) + GOLDEN)
    for i in range(m):
        h = base
        for j in range(d):
            h = mix64(h ^ (uint64(coords[i, j]) * GOLDEN + uint64(j + 1)))
        out[i] = h
    return out


@njit(cache=True)
def replica_seed(seed, replica):
    return mix64(mix64(uint64(seed)) ^ (uint64(replica + 1) * GOLDEN))


@njit(cache=True, inline="always")
def _less(ta, sa, tb, sb):
    return ta < tb or (ta == tb and sa < sb)


@njit(cache=True)
def _sift_down(ht, hs, pos, m):
    t = ht[pos]
    s = hs[pos]
    while True:
        c = 2 * pos + 1
        if c >= m:
            break
        r = c + 1
        if r < m and _less(ht[r], hs[r], ht[c], hs[c]):
            c = r
        if _less(ht[c], hs[c], t, s):
            ht[pos] = ht[c]
            hs[pos] = hs[c]
            pos = c
        else:
            break
    ht[pos] = t
    hs[pos] = s


@njit(cache=True)
def sample_product(keys, region, p, state):
    """Fill ``state`` on ``region`` with an independent Bernoulli(p) draw per site."""
    for s in region:
        state[s] = 1 if uniform(keys[s] ^ INIT_SALT, 0) < p else 0


@njit(cache=True)
def run(keys, region, indptr, indices, p, state, horizon, record,
        target, stop_site, stop_value, flip_on_change):
    """Process every ring of ``region`` with time <= ``horizon``.

    ``state`` is a full-lattice uint8 array updated in place.  Returns
    ``(ev_t, ev_site, ev_c, ev_coin, ev_applied, first_flip, legal_time,
    stop_time, ties)``; event arrays are empty unless ``record``.
    """
    m = region.shape[0]
    n_all = state.shape[0]
    ring = np.zeros(n_all, dtype=np.int64)
    first_flip = np.full(n_all, np.inf)
    ht = np.empty(m)
    hs = np.empty(m, dtype=np.int64)
    for j in range(m):
        s = region[j]
        ht[j] = -np.log(uniform(keys[s], 0))
        hs[j] = s
    for j in range(m // 2 - 1, -1, -1):
        _sift_down(ht, hs, j, m)

    cap = 1024 if record else 1
    ev_t = np.empty(cap)
    ev_site = np.empty(cap, dtype=np.int64)
    ev_c = np.empty(cap, dtype=np.uint8)
    ev_coin = np.empty(cap, dtype=np.uint8)
    ev_app = np.empty(cap, dtype=np.uint8)
    n_ev = 0

    cy = 1
    if target >= 0:
        for a in range(indptr[target], indptr[target + 1]):
            if state[indices[a]] == 1:
                cy = 0
                break
    legal = 0.0
    last = 0.0
    stop_time = np.inf
    ties = 0
    prev = -1.0
    if stop_site >= 0 and state[stop_site] == stop_value:
        stop_time = 0.0
        return (ev_t[:0], ev_site[:0], ev_c[:0], ev_coin[:0], ev_app[:0],
                first_flip, legal, stop_time, ties)
    if m == 0:
        if target >= 0:
            legal = cy * horizon
        return (ev_t[:0], ev_site[:0], ev_c[:0], ev_coin[:0], ev_app[:0],
                first_flip, legal, stop_time, ties)

    while True:
        t = ht[0]
        x = hs[0]
        if t > horizon:
            break
        if t == prev:
            ties += 1
        prev = t
        k = ring[x]
        coin = 1 if uniform(keys[x], 2 * k + 1) < p else 0
        c = 1
        for a in range(indptr[x], indptr[x + 1]):
            if state[indices[a]] == 1:
                c = 0
                break
        if target >= 0:
            legal += cy * (t - last)
            last = t
        if c == 1:
            old = state[x]
            state[x] = coin
            if (old != coin or not flip_on_change) and first_flip[x] == np.inf:
                first_flip[x] = t
            if target >= 0 and old != coin:
                cy = 1
                for a in range(indptr[target], indptr[target + 1]):
                    if state[indices[a]] == 1:
                        cy = 0
                        break
        if record:
            if n_ev == ev_t.shape[0]:
                new = 2 * n_ev
                ev_t = np.concatenate((ev_t, np.empty(new - n_ev)))
                ev_site = np.concatenate((ev_site, np.empty(new - n_ev, dtype=np.int64)))
                ev_c = np.concatenate((ev_c, np.empty(new - n_ev, dtype=np.uint8)))
                ev_coin = np.concatenate((ev_coin, np.empty(new - n_ev, dtype=np.uint8)))
                ev_app = np.concatenate((ev_app, np.empty(new - n_ev, dtype=np.uint8)))
            ev_t[n_ev] = t
            ev_site[n_ev] = x
            ev_c[n_ev] = c
            ev_coin[n_ev] = coin
            ev_app[n_ev] = c
            n_ev += 1
        if stop_site >= 0 and state[stop_site] == stop_value:
            stop_time = t
            break
        ring[x] = k + 1
        ht[0] = t - np.log(uniform(keys[x], 2 * (k + 1)))
        _sift_down(ht, hs, 0, m)

    if target >= 0:
        end = stop_time if stop_time < np.inf else horizon
        legal += cy * (end - last)
    return (ev_t[:n_ev], ev_site[:n_ev], ev_c[:n_ev], ev_coin[:n_ev], ev_app[:n_ev],
            first_flip, legal, stop_time, ties)


@njit(cache=True)
def sweep(keys, region, indptr, indices, p, state, horizon, stop_site, stop_value,
          flip_on_change, chunk):
    """Trajectory without a global event queue, exploiting orientation.

    Every constraint site has a smaller index than the site it constrains,
    so within a time window ``[a, b)`` the sites can be resolved one by one
    in index order, each reading the already-computed change times of its
    constraining neighbours.  Rings, coins, tie-breaking (a neighbour
    change at the same instant is seen first) and therefore the final
    state, first-flip times and stop time are identical to :func:`run`.
    Rings skipped while a site is blocked are still drawn, so every site
    consumes its substream exactly as in :func:`run`.

    ``state`` (full lattice) is updated in place.  Returns
    ``(first_flip, stop_time)``.
    """
    n_all = state.shape[0]
    m = region.shape[0]
    first_flip = np.full(n_all, np.inf)
    if stop_site >= 0 and state[stop_site] == stop_value:
        return first_flip, 0.0
    ring = np.zeros(n_all, dtype=np.int64)
    nt = np.empty(n_all)
    for j in range(m):
        s = region[j]
        nt[s] = -np.log(uniform(keys[s], 0))
    start_val = state.copy()
    c_lo = np.zeros(n_all, dtype=np.int64)
    c_hi = np.zeros(n_all, dtype=np.int64)
    ch_t = np.empty(4 * m + 16)
    ch_v = np.empty(4 * m + 16, dtype=np.uint8)
    ptr = np.empty(64, dtype=np.int64)

    a = 0.0
    while a <= horizon:
        b = a + chunk
        last = b >= horizon
        if last:
            b = horizon
        for j in range(m):
            start_val[region[j]] = state[region[j]]
        pos = 0
        for j in range(m):
            x = region[j]
            lo_a = indptr[x]
            deg = indptr[x + 1] - lo_a
            count = 0
            for u in range(deg):
                y = indices[lo_a + u]
                count += start_val[y]
                ptr[u] = c_lo[y]
            c_lo[x] = pos
            val = state[x]
            r = nt[x]
            k = ring[x]
            while r < b or (last and r <= b):
                # neighbour changes up to and including r come first
                for u in range(deg):
                    y = indices[lo_a + u]
                    while ptr[u] < c_hi[y] and ch_t[ptr[u]] <= r:
                        count += 1 if ch_v[ptr[u]] == 1 else -1
                        ptr[u] += 1
                if count > 0:
                    # blocked until the next neighbour change: rings are drawn
                    # (to keep the substream aligned) but otherwise inert
                    lim = np.inf
                    for u in range(deg):
                        y = indices[lo_a + u]
                        if ptr[u] < c_hi[y] and ch_t[ptr[u]] < lim:
                            lim = ch_t[ptr[u]]
                    if lim == np.inf:
                        lim = np.nextafter(b, np.inf) if last else b
                    while r < lim:
                        k += 1
                        r = r - np.log(uniform(keys[x], 2 * k))
                    continue
                coin = 1 if uniform(keys[x], 2 * k + 1) < p else 0
                if coin != val or not flip_on_change:
                    if first_flip[x] == np.inf:
                        first_flip[x] = r
                if coin != val:
                    val = coin
                    if pos == ch_t.shape[0]:
                        ch_t = np.concatenate((ch_t, np.empty(pos)))
                        ch_v = np.concatenate((ch_v, np.empty(pos, dtype=np.uint8)))
                    ch_t[pos] = r
                    ch_v[pos] = coin
                    pos += 1
                    if x == stop_site and val == stop_value:
                        state[x] = val
                        return first_flip, r
                k += 1
                r = r - np.log(uniform(keys[x], 2 * k))
            state[x] = val
            ring[x] = k
            nt[x] = r
            c_hi[x] = pos
        if last:
            break
        a = b
    return first_flip, np.inf


@njit(cache=True, parallel=True)
def batch_hitting_times(seed, replicas, coords, region, indptr, indices, p,
                        init, cap, stop_site, stop_value):
    out = np.empty(replicas)
    for r in prange(replicas):
        keys = site_keys(replica_seed(seed, r), coords)
        state = init.copy()
        out[r] = sweep(keys, region, indptr, indices, p, state, cap,
                       stop_site, stop_value, True, SWEEP_CHUNK)[1]
    return out


@njit(cache=True, parallel=True)
def batch_final_states(seed, replicas, coords, region, indptr, indices, p, init, horizon):
    """State id (over ``region`` bit order) at ``horizon`` for each replica."""
    out = np.empty(replicas, dtype=np.int64)
    for r in prange(replicas):
        keys = site_keys(replica_seed(seed, r), coords)
        state = init.copy()
        sweep(keys, region, indptr, indices, p, state, horizon, -1, 0, True, SWEEP_CHUNK)
        sid = 0
        for j in range(region.shape[0]):
            if state[region[j]] == 1:
                sid |= 1 << j
        out[r] = sid
    return out


@njit(cache=True, parallel=True)
def batch_legal_times(seed, replicas, coords, region, indptr, indices, p, target, horizon):
    """``|G(target, horizon)|`` per replica, each started from its own pi sample."""
    out = np.empty(replicas)
    n_all = coords.shape[0]
    for r in prange(replicas):
        keys = site_keys(replica_seed(seed, r), coords)
        state = np.zeros(n_all, dtype=np.uint8)
        sample_product(keys, region, p, state)
        res = run(keys, region, indptr, indices, p, state, horizon, False,
                  target, -1, 0, True)
        out[r] = res[6]
    return out


@njit(cache=True, parallel=True)
def batch_first_flips(seed, replicas, coords, region, indptr, indices, p, init,
                      horizon, flip_on_change):
    out = np.empty((replicas, coords.shape[0]))
    for r in prange(replicas):
        keys = site_keys(replica_seed(seed, r), coords)
        state = init.copy()
        out[r, :] = sweep(keys, region, indptr, indices, p, state, horizon,
                          -1, 0, flip_on_change, SWEEP_CHUNK)[0]
    return out


@njit(cache=True, parallel=True)
def batch_ring_counts(seed, replicas, coords, site, horizon):
    """Number of rings of ``site`` in ``[0, horizon]`` per replica."""
    out = np.empty(replicas, dtype=np.int64)
    for r in prange(replicas):
        keys = site_keys(replica_seed(seed, r), coords)
        key = keys[site]
        t = -np.log(uniform(key, 0))
        k = 0
        while t <= horizon:
            k += 1
            t = t - np.log(uniform(key, 2 * k))
        out[r] = k
    return out
