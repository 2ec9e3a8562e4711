"""Convolutional coding and SUM decoders on the M-user joint trellis.

The joint state concatenates the users' shift registers, user 0 in the low
bits.  A single-user register ``reg = (input << (L-1)) | state`` produces
output ``j`` as ``parity(reg & generators[j])`` (the generator MSB taps the
current input, the usual 802.11 convention) and moves to ``reg >> 1``.  So
the newest input sits in the top bit of the next state, which means every
trellis edge's input bits can be read off its destination state.

Coded bits are interleaved per stage: position ``stage * n_out + j`` carries
output ``j``.  Decoders take a likelihood grid of shape
``(stages * n_out, 2**M)`` and return the SUM word of the ``K`` source bits.

Tie-breaking is deterministic everywhere: among equal path metrics the
predecessor with the lowest joint state index wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numba
import numpy as np

from .phy import marginal_likelihoods


@dataclass(frozen=True)
class ConvCode:
    constraint_length: int = 7
    generators: tuple[int, ...] = (0o133, 0o171)
    termination: bool = True  # zero tail

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(int(g) for g in self.generators))
        if self.constraint_length < 2:
            raise ValueError("constraint_length must be >= 2")
        if not self.generators:
            raise ValueError("need at least one generator")
        for g in self.generators:
            if g <= 0 or g >= (1 << self.constraint_length):
                raise ValueError(f"generator {oct(g)} must be nonzero with degree < L")
        if not self.termination:
            raise ValueError("only zero-tail termination is supported")

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_out(self) -> int:
        return len(self.generators)

    @property
    def rate(self) -> float:
        return 1.0 / self.n_out

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    def coded_length(self, k: int) -> int:
        return (k + self.memory) * self.n_out

    def source_length(self, n: int) -> int:
        if n % self.n_out:
            raise ValueError("coded length is not a multiple of the output count")
        k = n // self.n_out - self.memory
        if k < 0:
            raise ValueError("coded length shorter than the tail")
        return k

    @cached_property
    def _tables(self):
        """Single-user trellis tables.

        forward: ``nxt[s, a]``, ``lab[s, a]`` (output label, bit j = output j);
        backward: ``prv[t, x]``, ``plab[t, x]`` for the edge into ``t`` whose
        dropped oldest bit is ``x``.
        """
        m, ns = self.memory, self.n_states
        nxt = np.zeros((ns, 2), np.int64)
        lab = np.zeros((ns, 2), np.int64)
        prv = np.zeros((ns, 2), np.int64)
        plab = np.zeros((ns, 2), np.int64)
        for s in range(ns):
            for a in range(2):
                reg = (a << m) | s
                nxt[s, a] = reg >> 1
                lab[s, a] = _label(reg, self.generators)
        for t in range(ns):
            for x in range(2):
                reg = (t << 1) | x
                prv[t, x] = reg & (ns - 1)
                plab[t, x] = _label(reg, self.generators)
        return nxt, lab, prv, plab

    def split_tables(self, m_users: int):
        """Forward joint tables for two user groups (low users, high users).

        For a group state ``g`` and group input ``e`` (bit i = input of the
        group's i-th user), ``next[g, e]`` is the group's part of the joint
        next state and ``combo[g, e]`` its share of the combination index.
        """
        key = ("split", m_users)
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            h = (m_users + 1) // 2
            q = 1 << m_users
            lo = self._group_tables(range(h), q)
            hi = self._group_tables(range(h, m_users), q)
            cache[key] = (*lo, *hi, h * self.memory)
        return cache[key]

    def _group_tables(self, users, q):
        users = list(users)
        nxt, lab = self._tables[:2]
        m = self.memory
        g_states = 1 << (len(users) * m)
        n_in = 1 << len(users)
        gs = np.arange(g_states)[:, None]
        ge = np.arange(n_in)[None, :]
        t = np.zeros((g_states, n_in), np.int64)
        c = np.zeros((g_states, n_in), np.int64)
        for i, u in enumerate(users):
            su = (gs >> (i * m)) & (self.n_states - 1)
            a = (ge >> i) & 1
            t |= nxt[su, a] << (i * m)
            lu = lab[su, a]
            for j in range(self.n_out):
                c += ((lu >> j) & 1) * (1 << u) * q**j
        return t, c

    def taps(self) -> np.ndarray:
        """(n_out, L) tap matrix, column d multiplying the input delayed by d."""
        L = self.constraint_length
        return np.array(
            [[(g >> (L - 1 - d)) & 1 for d in range(L)] for g in self.generators],
            dtype=np.uint8,
        )


def _label(reg: int, generators) -> int:
    out = 0
    for j, g in enumerate(generators):
        out |= (bin(reg & g).count("1") & 1) << j
    return out


def conv_encode(bits, code: ConvCode) -> np.ndarray:
    """Zero-tail encode; output length ``(K + L - 1) * n_out``."""
    u = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if u.size and u.max() > 1:
        raise ValueError("bits must be 0/1")
    padded = np.concatenate([u, np.zeros(code.memory, np.uint8)])
    taps = code.taps()
    out = np.empty((padded.size, code.n_out), np.uint8)
    for j in range(code.n_out):
        out[:, j] = np.convolve(padded, taps[j])[: padded.size] & 1
    return out.reshape(-1)


@dataclass
class DecodeStats:
    """Instrumentation counters accumulated across decoder calls."""

    acs_ops: int = 0
    stages: int = 0
    frames: int = 0
    extra: dict = field(default_factory=dict)


class JointPath(NamedTuple):
    user_bits: np.ndarray  # (M, K)
    sum_word: np.ndarray  # (K,)
    cost: float  # sum of -log likelihoods along the path
    acs_ops: int


def _check_grid(lh, code: ConvCode, m_users: int) -> tuple[np.ndarray, int]:
    lh = np.asarray(lh, dtype=np.float64)
    if m_users < 1:
        raise ValueError("need at least one user")
    if lh.ndim != 2 or lh.shape[1] != (1 << m_users):
        raise ValueError(f"likelihood grid must be (positions, {1 << m_users})")
    k = code.source_length(lh.shape[0])
    if not np.all(np.isfinite(lh)) or np.any(lh < 0):
        raise ValueError("likelihoods must be finite and nonnegative")
    if np.any(lh.max(axis=1) <= 0):
        raise ValueError("infeasible likelihoods: a position has no admissible combination")
    return lh, k


def _neg_log(lh: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log(lh)


# ---------------------------------------------------------------------------
# numba kernels

@numba.njit(cache=True)
def _stage_table(nl, st, n_out, q):
    """Branch cost of every combination label tuple at one stage (mixed radix q)."""
    size = q**n_out
    tab = np.empty(size)
    for idx in range(size):
        c = idx
        v = 0.0
        for j in range(n_out):
            v += nl[st * n_out + j, c % q]
            c //= q
        tab[idx] = v
    return tab


@numba.njit(cache=True)
def _combo_index(labels, m_users, n_out, q):
    """Mixed-radix index of the per-position combinations of user labels."""
    idx = 0
    mul = 1
    for j in range(n_out):
        c = 0
        for u in range(m_users):
            c |= ((labels[u] >> j) & 1) << u
        idx += c * mul
        mul *= q
    return idx


@numba.njit(cache=True)
def _viterbi_m2(nl, prv, plab, n_out, stages):
    """Full-state ACS for two users, laid out so the inner loop is contiguous."""
    ns = prv.shape[0]
    half = ns // 2
    nlab = 1 << n_out
    S = ns * ns
    pm = np.full((ns, ns), np.inf)  # [state_B, state_A]
    pm[0, 0] = 0.0
    ev = np.empty((ns, half))
    od = np.empty((ns, half))
    cost0 = np.empty((nlab, ns))
    cost1 = np.empty((nlab, ns))
    tab = np.empty((nlab, nlab))
    surv = np.empty((stages, S), np.uint8)
    offset = 0.0
    for st in range(stages):
        for la in range(nlab):
            for lb in range(nlab):
                v = 0.0
                for j in range(n_out):
                    v += nl[st * n_out + j, ((la >> j) & 1) + 2 * ((lb >> j) & 1)]
                tab[la, lb] = v
        for lb in range(nlab):
            for t in range(ns):
                cost0[lb, t] = tab[plab[t, 0], lb]
                cost1[lb, t] = tab[plab[t, 1], lb]
        for r in range(ns):
            for q in range(half):
                ev[r, q] = pm[r, 2 * q]
                od[r, q] = pm[r, 2 * q + 1]
        mn = np.inf
        for tb in range(ns):
            r0 = prv[tb, 0]
            r1 = prv[tb, 1]
            l0 = plab[tb, 0]
            l1 = plab[tb, 1]
            base = tb * ns
            for h in range(2):
                off = h * half
                for q in range(half):
                    t = off + q
                    v = ev[r0, q] + cost0[l0, t]
                    e = 0
                    a1 = od[r0, q] + cost1[l0, t]
                    if a1 < v:
                        v = a1
                        e = 1
                    b0 = ev[r1, q] + cost0[l1, t]
                    if b0 < v:
                        v = b0
                        e = 2
                    b1 = od[r1, q] + cost1[l1, t]
                    if b1 < v:
                        v = b1
                        e = 3
                    pm[tb, t] = v
                    surv[st, base + t] = e
                    if v < mn:
                        mn = v
        if not mn < np.inf:
            return surv, pm.reshape(-1), np.inf, st
        for tb in range(ns):
            for t in range(ns):
                pm[tb, t] -= mn
        offset += mn
    return surv, pm.reshape(-1), offset, stages


@numba.njit(cache=True)
def _viterbi_generic(nl, prv, plab, m_users, mem, n_out, stages):
    ns = prv.shape[0]
    mask = ns - 1
    q = 1 << m_users
    S = 1 << (m_users * mem)
    E = 1 << m_users
    pm = np.full(S, np.inf)
    pm[0] = 0.0
    new = np.empty(S)
    surv = np.empty((stages, S), np.uint8)
    labels = np.empty(m_users, np.int64)
    offset = 0.0
    for st in range(stages):
        tab = _stage_table(nl, st, n_out, q)
        mn = np.inf
        for t in range(S):
            best = np.inf
            be = 0
            for e in range(E):
                p = 0
                for u in range(m_users):
                    tu = (t >> (u * mem)) & mask
                    x = (e >> u) & 1
                    p |= prv[tu, x] << (u * mem)
                    labels[u] = plab[tu, x]
                v = pm[p] + tab[_combo_index(labels, m_users, n_out, q)]
                if v < best:
                    best = v
                    be = e
            new[t] = best
            surv[st, t] = be
            if best < mn:
                mn = best
        if not mn < np.inf:
            return surv, new, np.inf, st
        for t in range(S):
            pm[t] = new[t] - mn
        offset += mn
    return surv, pm, offset, stages


@numba.njit(cache=True)
def _traceback_full(surv, prv, m_users, mem, end_state):
    stages = surv.shape[0]
    mask = (1 << mem) - 1
    inputs = np.empty((m_users, stages), np.uint8)
    t = end_state
    for st in range(stages - 1, -1, -1):
        e = surv[st, t]
        p = 0
        for u in range(m_users):
            tu = (t >> (u * mem)) & mask
            inputs[u, st] = (tu >> (mem - 1)) & 1
            p |= prv[tu, (e >> u) & 1] << (u * mem)
        t = p
    return inputs


@numba.njit(cache=True)
def _kth_smallest(a, n, k):
    """k-th smallest (0-based) of a[:n]; reorders a in place."""
    lo = 0
    hi = n - 1
    while hi > lo:
        mid = (lo + hi) >> 1
        x, y, z = a[lo], a[mid], a[hi]
        if x > y:
            x, y = y, x
        if y > z:
            y = z
            if x > y:
                y = x
        pivot = y
        i = lo
        j = hi
        while i <= j:
            while a[i] < pivot:
                i += 1
            while a[j] > pivot:
                j -= 1
            if i <= j:
                a[i], a[j] = a[j], a[i]
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return a[k]
    return a[k]


@numba.njit(cache=True)
def _select_threshold(vals, n, k, scratch):
    """k-th smallest of vals[:n] (nonnegative, finite) via a bucket pass."""
    hi = 0.0
    for c in range(n):
        hi = max(hi, vals[c])
    nb = 64
    if not hi > 0.0:
        return 0.0
    inv = (nb - 1) / hi
    hist = np.zeros(nb + 1, np.int64)
    for c in range(n):
        hist[int(vals[c] * inv)] += 1
    acc = 0
    b = 0
    while acc + hist[b] <= k:
        acc += hist[b]
        b += 1
    m = 0
    for c in range(n):
        v = vals[c]
        scratch[m] = v
        m += int(v * inv) == b
    return _kth_smallest(scratch, m, k - acc)


@numba.njit(cache=True)
def _rsjd_kernel(nl, tln, tlc, thn, thc, shift, m_users, mem, n_out, stages, R):
    """Reduced-state search keeping at most R lowest-metric states per stage.

    Returns per-stage survivor lists, their parent slot in the previous list,
    final metrics, the cumulative metric offset and the number of ACS
    operations (one per retained state).  Lists are in discovery order; ties
    are resolved on state indices so that order never matters.  States only
    reachable through zero-likelihood branches are dropped.
    """
    q = 1 << m_users
    S = 1 << (m_users * mem)
    E = 1 << m_users
    lmask = (1 << shift) - 1
    el_n = tln.shape[1]
    eh_n = thn.shape[1]
    best = np.full(S, np.inf)
    parent = np.full(S, -1, np.int64)
    pstate = np.zeros(S, np.int64)
    states = np.zeros((stages + 1, R), np.int64)
    parents = np.zeros((stages + 1, R), np.int64)
    counts = np.zeros(stages + 1, np.int64)
    metric = np.zeros(R)
    counts[0] = 1
    touched = np.empty(E * R, np.int64)
    vals = np.empty(E * R)
    scratch = np.empty(E * R)
    ties = np.empty(E * R, np.int64)
    offset = 0.0
    acs = 0
    for st in range(stages):
        tab = _stage_table(nl, st, n_out, q)
        nt = 0
        for i in range(counts[st]):
            s = states[st, i]
            sl = s & lmask
            sh = s >> shift
            base = metric[i]
            for eh in range(eh_n):
                th = thn[sh, eh] << shift
                ch = thc[sh, eh]
                for el in range(el_n):
                    t = tln[sl, el] | th
                    v = base + tab[tlc[sl, el] + ch]
                    bt = best[t]
                    # infinite-metric branches never claim a state
                    if v < bt or (v == bt and v < np.inf and s < pstate[t]):
                        if parent[t] < 0:
                            touched[nt] = t
                            nt += 1
                        best[t] = v
                        parent[t] = i
                        pstate[t] = s
        row = states[st + 1]
        mn = np.inf
        for c in range(nt):
            v = best[touched[c]]
            vals[c] = v
            mn = min(mn, v)
        if not mn < np.inf:
            counts[st + 1] = 0
            return states, parents, counts, metric, np.inf, acs
        if nt > R:
            # compare on the shifted values so the threshold is an exact member
            for c in range(nt):
                vals[c] -= mn
            thr = _select_threshold(vals, nt, R - 1, scratch)
            k = 0
            nties = 0
            for c in range(nt):
                t = touched[c]
                v = vals[c]
                row[k] = t
                k += v < thr
                ties[nties] = t
                nties += v == thr
            if nties > R - k:
                tsorted = np.sort(ties[:nties])
                for c in range(R - k):
                    row[k + c] = tsorted[c]
            else:
                for c in range(nties):
                    row[k + c] = ties[c]
            n = R
        else:
            n = nt
            for c in range(nt):
                row[c] = touched[c]
        for c in range(n):
            t = row[c]
            metric[c] = best[t] - mn
            parents[st + 1, c] = parent[t]
        for c in range(nt):
            t = touched[c]
            best[t] = np.inf
            parent[t] = -1
        counts[st + 1] = n
        offset += mn
        acs += n
    return states, parents, counts, metric, offset, acs


@numba.njit(cache=True)
def _traceback_reduced(states, parents, end_slot, m_users, mem):
    stages = states.shape[0] - 1
    mask = (1 << mem) - 1
    inputs = np.empty((m_users, stages), np.uint8)
    slot = end_slot
    for st in range(stages, 0, -1):
        t = states[st, slot]
        for u in range(m_users):
            inputs[u, st - 1] = (((t >> (u * mem)) & mask) >> (mem - 1)) & 1
        slot = parents[st, slot]
    return inputs


# ---------------------------------------------------------------------------
# Viterbi-family decoders

def joint_viterbi(lh, code: ConvCode, m_users: int, retained: int | None = None) -> JointPath:
    """Minimum-cost zero-to-zero path on the joint trellis.

    ``retained=None`` runs the full-state search; otherwise only the
    ``retained`` lowest-metric states survive each stage.
    """
    lh, k = _check_grid(lh, code, m_users)
    nl = _neg_log(lh)
    nxt, lab, prv, plab = code._tables
    mem, n_out = code.memory, code.n_out
    stages = k + mem
    full_states = 1 << (m_users * mem)
    if retained is not None and not 1 <= retained <= full_states:
        raise ValueError(f"retained states must lie in [1, {full_states}]")

    if retained is None:
        if m_users == 2:
            surv, pm, offset, done = _viterbi_m2(nl, prv, plab, n_out, stages)
        else:
            surv, pm, offset, done = _viterbi_generic(nl, prv, plab, m_users, mem, n_out, stages)
        if done < stages or not np.isfinite(pm[0]):
            raise ValueError("infeasible likelihoods: no valid joint path")
        inputs = _traceback_full(surv, prv, m_users, mem, 0)
        cost = offset + float(pm[0])
        acs = full_states * stages
    else:
        states, parents, counts, metric, offset, acs = _rsjd_kernel(
            nl, *code.split_tables(m_users), m_users, mem, n_out, stages, retained
        )
        if not np.isfinite(offset):
            raise ValueError("infeasible likelihoods: no valid joint path")
        n = counts[stages]
        final = states[stages, :n]
        hit = np.nonzero(final == 0)[0]
        if hit.size:
            slot = int(hit[0])
        else:
            # zero end state pruned: lowest metric, then lowest state index
            slot = int(np.lexsort((final, metric[:n]))[0])
        inputs = _traceback_reduced(states, parents, slot, m_users, mem)
        cost = offset + float(metric[slot])
    user_bits = inputs[:, :k]
    return JointPath(user_bits, user_bits.sum(axis=0).astype(np.int64), cost, int(acs))


def _record(stats: DecodeStats | None, acs: int, stages: int) -> None:
    if stats is not None:
        stats.acs_ops += acs
        stats.stages += stages
        stats.frames += 1


def fsjd_decode(lh, code: ConvCode, m_users: int, stats: DecodeStats | None = None) -> np.ndarray:
    """Full-state joint decoder: SUM word of the ML joint codeword (log-max)."""
    path = joint_viterbi(lh, code, m_users)
    _record(stats, path.acs_ops, len(path.sum_word) + code.memory)
    return path.sum_word


def rsjd_decode(
    lh, code: ConvCode, m_users: int, retained: int = 256, stats: DecodeStats | None = None
) -> np.ndarray:
    """Reduced-state joint decoder keeping ``retained`` states per stage."""
    retained = min(retained, 1 << (m_users * code.memory))
    path = joint_viterbi(lh, code, m_users, retained)
    _record(stats, path.acs_ops, len(path.sum_word) + code.memory)
    return path.sum_word


def conv_psud_decode(lh, code: ConvCode, m_users: int, stats: DecodeStats | None = None) -> np.ndarray:
    """Parallel single-user decoders on per-user marginal likelihoods."""
    lh, k = _check_grid(lh, code, m_users)
    total = np.zeros(k, np.int64)
    for u in range(m_users):
        marg = lh if m_users == 1 else marginal_likelihoods(lh, u)
        path = joint_viterbi(marg, code, 1)
        _record(stats, path.acs_ops, k + code.memory)
        total += path.user_bits[0]
    return total


# ---------------------------------------------------------------------------
# BCJR SUM-bit decoder

@numba.njit(cache=True)
def _bcjr_m2(g, prv, plab, nxt, lab, n_out, stages):
    """Forward-backward over the full two-user trellis.

    ``g`` holds per-position combination likelihoods.  Returns the per-stage
    unnormalized posterior of the SUM value (0, 1, 2).
    """
    ns = prv.shape[0]
    half = ns // 2
    nlab = 1 << n_out
    mem = 0
    while (1 << mem) < ns:
        mem += 1
    alpha = np.zeros((stages + 1, ns, ns))
    alpha[0, 0, 0] = 1.0
    tab = np.empty((nlab, nlab))
    tabs = np.empty((stages, nlab, nlab))
    ev = np.empty((ns, half))
    od = np.empty((ns, half))
    g0 = np.empty((nlab, ns))
    g1 = np.empty((nlab, ns))
    for st in range(stages):
        for la in range(nlab):
            for lb in range(nlab):
                v = 1.0
                for j in range(n_out):
                    v *= g[st * n_out + j, ((la >> j) & 1) + 2 * ((lb >> j) & 1)]
                tab[la, lb] = v
                tabs[st, la, lb] = v
        for lb in range(nlab):
            for t in range(ns):
                g0[lb, t] = tab[plab[t, 0], lb]
                g1[lb, t] = tab[plab[t, 1], lb]
        a = alpha[st]
        for r in range(ns):
            for q in range(half):
                ev[r, q] = a[r, 2 * q]
                od[r, q] = a[r, 2 * q + 1]
        nxt_a = alpha[st + 1]
        total = 0.0
        for tb in range(ns):
            r0 = prv[tb, 0]
            r1 = prv[tb, 1]
            l0 = plab[tb, 0]
            l1 = plab[tb, 1]
            for h in range(2):
                off = h * half
                for q in range(half):
                    t = off + q
                    v = (ev[r0, q] * g0[l0, t] + od[r0, q] * g1[l0, t]
                         + ev[r1, q] * g0[l1, t] + od[r1, q] * g1[l1, t])
                    nxt_a[tb, t] = v
                    total += v
        if not total > 0.0:
            return np.zeros((0, 3)), st
        for tb in range(ns):
            for t in range(ns):
                nxt_a[tb, t] /= total

    post = np.zeros((stages, 3))
    beta = np.zeros((ns, ns))
    beta[0, 0] = 1.0
    prev = np.empty((ns, ns))
    hb = np.empty((2, nlab, ns))
    for st in range(stages - 1, -1, -1):
        # posterior of the inputs decided at this stage: destination states
        a = alpha[st + 1]
        for tb in range(ns):
            ib = (tb >> (mem - 1)) & 1
            for t in range(ns):
                post[st, ib + ((t >> (mem - 1)) & 1)] += a[tb, t] * beta[tb, t]
        for la in range(nlab):
            for lb in range(nlab):
                tab[la, lb] = tabs[st, la, lb]
        for x in range(2):
            for lb in range(nlab):
                for s in range(ns):
                    hb[x, lb, s] = tab[lab[s, x], lb]
        total = 0.0
        for sb in range(ns):
            t0 = nxt[sb, 0]
            t1 = nxt[sb, 1]
            k0 = lab[sb, 0]
            k1 = lab[sb, 1]
            for s in range(ns):
                u0 = nxt[s, 0]
                u1 = nxt[s, 1]
                v = (beta[t0, u0] * hb[0, k0, s] + beta[t0, u1] * hb[1, k0, s]
                     + beta[t1, u0] * hb[0, k1, s] + beta[t1, u1] * hb[1, k1, s])
                prev[sb, s] = v
                total += v
        if not total > 0.0:
            return np.zeros((0, 3)), st
        for sb in range(ns):
            for s in range(ns):
                beta[sb, s] = prev[sb, s] / total
    return post, stages


@numba.njit(cache=True)
def _bcjr_lists(g, nxt, lab, m_users, mem, n_out, states, counts):
    """Forward-backward restricted to per-stage state lists (sorted by state)."""
    ns = nxt.shape[0]
    mask = ns - 1
    q = 1 << m_users
    E = 1 << m_users
    stages = states.shape[0] - 1
    width = states.shape[1]
    alpha = np.zeros((stages + 1, width))
    alpha[0, 0] = 1.0
    labels = np.empty(m_users, np.int64)
    post = np.zeros((stages, m_users + 1))
    tabs = np.empty((stages, q**n_out))
    for st in range(stages):
        size = q**n_out
        for idx in range(size):
            c = idx
            v = 1.0
            for j in range(n_out):
                v *= g[st * n_out + j, c % q]
                c //= q
            tabs[st, idx] = v
    for st in range(stages):
        nn = counts[st + 1]
        row = states[st + 1, :nn]
        total = 0.0
        for i in range(counts[st]):
            s = states[st, i]
            a = alpha[st, i]
            if a == 0.0:
                continue
            for e in range(E):
                t = 0
                for u in range(m_users):
                    su = (s >> (u * mem)) & mask
                    bit = (e >> u) & 1
                    t |= nxt[su, bit] << (u * mem)
                    labels[u] = lab[su, bit]
                j = np.searchsorted(row, t)
                if j < nn and row[j] == t:
                    v = a * tabs[st, _combo_index(labels, m_users, n_out, q)]
                    alpha[st + 1, j] += v
                    total += v
        if not total > 0.0:
            return np.zeros((0, m_users + 1)), st
        for j in range(nn):
            alpha[st + 1, j] /= total
    beta = np.zeros(width)
    nn = counts[stages]
    j0 = np.searchsorted(states[stages, :nn], 0)
    if j0 < nn and states[stages, j0] == 0:
        beta[j0] = 1.0
    else:
        beta[:nn] = 1.0
    for st in range(stages - 1, -1, -1):
        nn = counts[st + 1]
        row = states[st + 1, :nn]
        for j in range(nn):
            t = row[j]
            ssum = 0
            for u in range(m_users):
                ssum += (((t >> (u * mem)) & mask) >> (mem - 1)) & 1
            post[st, ssum] += alpha[st + 1, j] * beta[j]
        newb = np.zeros(width)
        total = 0.0
        for i in range(counts[st]):
            s = states[st, i]
            acc = 0.0
            for e in range(E):
                t = 0
                for u in range(m_users):
                    su = (s >> (u * mem)) & mask
                    bit = (e >> u) & 1
                    t |= nxt[su, bit] << (u * mem)
                    labels[u] = lab[su, bit]
                j = np.searchsorted(row, t)
                if j < nn and row[j] == t:
                    acc += beta[j] * tabs[st, _combo_index(labels, m_users, n_out, q)]
            newb[i] = acc
            total += acc
        if not total > 0.0:
            return np.zeros((0, m_users + 1)), st
        for i in range(counts[st]):
            beta[i] = newb[i] / total
    return post, stages


def bcjr_sum_posteriors(
    lh, code: ConvCode, m_users: int, retained: int | None = None,
    stats: DecodeStats | None = None,
) -> np.ndarray:
    """Per-stage posterior of the SUM value, shape (K, M+1), rows sum to 1.

    ``retained=None`` uses the full joint trellis.  Otherwise the state sets
    recorded by a reduced-state Viterbi pass with ``retained`` states are
    reused for both recursions.
    """
    lh, k = _check_grid(lh, code, m_users)
    g = lh / lh.max(axis=1, keepdims=True)
    nxt, lab, prv, plab = code._tables
    mem, n_out = code.memory, code.n_out
    stages = k + mem
    full_states = 1 << (m_users * mem)
    if retained is None and m_users == 2:
        post, done = _bcjr_m2(g, prv, plab, nxt, lab, n_out, stages)
        acs = full_states * stages
    else:
        if retained is None:
            states = np.tile(np.arange(full_states), (stages + 1, 1))
            states[0, 1:] = 0
            counts = np.full(stages + 1, full_states)
            counts[0] = 1
            acs = full_states * stages
        else:
            retained = min(retained, full_states)
            states, _, counts, _, offset, acs = _rsjd_kernel(
                _neg_log(lh), *code.split_tables(m_users), m_users, mem, n_out, stages, retained
            )
            if not np.isfinite(offset):
                raise ValueError("infeasible likelihoods: no valid joint path")
            for st in range(stages + 1):
                states[st, : counts[st]] = np.sort(states[st, : counts[st]])
        post, done = _bcjr_lists(g, nxt, lab, m_users, mem, n_out, states, counts)
    if done < stages:
        raise ValueError("numerical failure: all-zero stage posterior")
    post = post[:k]
    z = post.sum(axis=1, keepdims=True)
    if np.any(z <= 0):
        raise ValueError("numerical failure: all-zero stage posterior")
    _record(stats, int(acs), stages)
    return post / z


def bcjr_sum_decode(
    lh, code: ConvCode, m_users: int, mode: str | int = "full",
    stats: DecodeStats | None = None,
) -> np.ndarray:
    """SUM-bit MAP decoding; ``mode`` is ``"full"`` or a retained-state count."""
    retained = None if mode == "full" else int(mode)
    post = bcjr_sum_posteriors(lh, code, m_users, retained, stats)
    return np.argmax(post, axis=1).astype(np.int64)
