"""LDPC encoding and joint belief propagation over 2^M-ary message vectors.

A message vector holds probabilities of the ``2**M`` user-bit combinations at
one variable (bit ``u`` of the index is user ``u``'s bit).  A parity check
constrains every user's bits independently, so its combination rule is the
XOR-convolution of the incoming vectors.  The fast decoder evaluates that
rule in the Walsh-Hadamard domain, where XOR-convolution becomes a pointwise
product; :func:`chk_update` keeps the direct pairwise fold as the reference.

Parity-check file format (``.pcm``, plain text)::

    # airsum-pcm v1
    N K M
    v v v ...        one line per check: 0-based variable indices

Lines starting with ``#`` after the first are comments.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .phy import marginal_likelihoods

PCM_HEADER = "# airsum-pcm v1"
FLOOR = 1e-30
# nonzero running products are lifted to this to stay clear of slow subnormals
TINY = 1e-270  # TINY * FLOOR is still a normal double
DEFAULT_ITERATIONS = 40


class DecodeFailure(ValueError):
    """Belief propagation hit an all-zero product (inconsistent evidence)."""


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Sparse binary parity-check matrix stored as per-check variable lists."""

    n: int
    checks: tuple[tuple[int, ...], ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "checks", tuple(tuple(sorted(int(v) for v in c)) for c in self.checks)
        )
        if self.n <= 0 or not self.checks:
            raise ValueError("parity-check matrix must be nonempty")
        seen = np.zeros(self.n, bool)
        for c in self.checks:
            if not c:
                raise ValueError("all-zero check row")
            if len(set(c)) != len(c):
                raise ValueError("repeated variable in a check")
            if c[0] < 0 or c[-1] >= self.n:
                raise ValueError("variable index out of range")
            seen[list(c)] = True
        if not seen.all():
            raise ValueError("all-zero variable column")

    @property
    def m(self) -> int:
        return len(self.checks)

    @classmethod
    def from_dense(cls, h, name: str = "") -> "ParityCheckMatrix":
        h = np.asarray(h)
        return cls(h.shape[1], tuple(tuple(np.flatnonzero(r)) for r in h), name)

    @classmethod
    def from_qc(cls, base: Sequence[Sequence[int]], z: int, name: str = "") -> "ParityCheckMatrix":
        """Expand a quasi-cyclic prototype; entry -1 is the zero block, s >= 0
        the identity cyclically shifted right by s."""
        base = np.asarray(base, dtype=np.int64)
        rows, cols = base.shape
        checks = []
        for i in range(rows):
            for k in range(z):
                checks.append(
                    tuple(j * z + (k + base[i, j]) % z for j in range(cols) if base[i, j] >= 0)
                )
        return cls(cols * z, tuple(checks), name)

    def dense(self) -> np.ndarray:
        h = np.zeros((self.m, self.n), np.uint8)
        for i, c in enumerate(self.checks):
            h[i, list(c)] = 1
        return h

    @cached_property
    def _systematic(self):
        """GF(2) reduction with pivots taken from the rightmost columns.

        Returns (info positions, pivot positions, parity map) where the parity
        bits at the pivot positions equal ``parity_map @ info_bits`` mod 2.
        """
        h = self.dense().astype(bool)
        m, n = h.shape
        pivots = []
        row = 0
        for col in range(n - 1, -1, -1):
            if row == m:
                break
            hits = np.flatnonzero(h[row:, col])
            if hits.size == 0:
                continue
            r = row + hits[0]
            if r != row:
                h[[row, r]] = h[[r, row]]
            others = np.flatnonzero(h[:, col])
            others = others[others != row]
            h[others] ^= h[row]
            pivots.append(col)
            row += 1
        pivots = np.array(pivots, dtype=np.int64)
        info = np.setdiff1d(np.arange(n), pivots)
        parity_map = h[: len(pivots)][:, info].astype(np.uint8)
        return info, pivots, parity_map

    @property
    def rank(self) -> int:
        return len(self._systematic[1])

    @property
    def k(self) -> int:
        return self.n - self.rank

    @property
    def info_positions(self) -> np.ndarray:
        return self._systematic[0]

    @cached_property
    def graph(self) -> "TannerGraph":
        return TannerGraph.build(self)

    # -- file IO ------------------------------------------------------------
    def save(self, path) -> None:
        lines = [PCM_HEADER, f"{self.n} {self.k} {self.m}"]
        lines += [" ".join(map(str, c)) for c in self.checks]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ParityCheckMatrix":
        text = Path(path).read_text().splitlines()
        return cls.parse(text, name=Path(path).stem)

    @classmethod
    def parse(cls, lines: Sequence[str], name: str = "") -> "ParityCheckMatrix":
        if not lines or lines[0].strip() != PCM_HEADER:
            raise ValueError(f"missing header {PCM_HEADER!r}")
        body = [l.split() for l in lines[1:] if l.strip() and not l.lstrip().startswith("#")]
        if not body or len(body[0]) != 3:
            raise ValueError("expected 'N K M' line")
        n, k, m = map(int, body[0])
        rows = [tuple(int(v) for v in r) for r in body[1:]]
        if len(rows) != m:
            raise ValueError(f"header declares {m} checks, found {len(rows)}")
        h = cls(n, tuple(rows), name)
        if h.k != k:
            raise ValueError(f"header declares K={k}, matrix rank gives K={h.k}")
        return h


def builtin_matrix(name: str = "wifi-1296-r12") -> ParityCheckMatrix:
    """Matrices shipped with the package: ``wifi-1296-r12`` and ``tree-13``."""
    files = {"wifi-1296-r12": "wifi_n1296_r12.pcm", "tree-13": "tree_n13.pcm"}
    if name not in files:
        raise ValueError(f"unknown matrix {name!r}; choose from {sorted(files)}")
    ref = resources.files("airsum") / "data" / files[name]
    with resources.as_file(ref) as p:
        h = ParityCheckMatrix.load(p)
    object.__setattr__(h, "name", name)
    return h


def resolve_matrix(spec: str) -> ParityCheckMatrix:
    """Built-in name or path to a ``.pcm`` file."""
    if Path(spec).suffix == ".pcm" or "/" in spec:
        return ParityCheckMatrix.load(spec)
    return builtin_matrix(spec)


def ldpc_encode(bits, h: ParityCheckMatrix) -> np.ndarray:
    """Systematic encode of one message (length K) or a batch (rows of K)."""
    msg = np.asarray(bits, dtype=np.uint8)
    single = msg.ndim == 1
    msg = np.atleast_2d(msg)
    info, pivots, pmap = h._systematic
    if msg.shape[1] != len(info):
        raise ValueError(f"message length {msg.shape[1]} != K={len(info)}")
    cw = np.zeros((msg.shape[0], h.n), np.uint8)
    cw[:, info] = msg
    cw[:, pivots] = (msg.astype(np.int32) @ pmap.T.astype(np.int32)) & 1
    return cw[0] if single else cw


def syndrome(cw, h: ParityCheckMatrix) -> np.ndarray:
    cw = np.asarray(cw, dtype=np.uint8)
    return np.array([np.bitwise_xor.reduce(cw[..., list(c)], axis=-1) for c in h.checks]).T


# ---------------------------------------------------------------------------
# reference message operations

def init_messages(lh) -> np.ndarray:
    """Evidence vectors: each position's likelihoods normalized to sum 1."""
    lh = np.asarray(lh, dtype=np.float64)
    s = lh.sum(axis=-1, keepdims=True)
    if np.any(s <= 0) or np.any(lh < 0):
        raise ValueError("likelihoods must be nonnegative with a positive sum per position")
    return lh / s


def _xor_conv(a, b):
    q = len(a)
    return [sum(a[x] * b[x ^ v] for x in range(q)) for v in range(q)]


def chk_update(inputs):
    """Check-node output: left fold of pairwise XOR-convolutions.

    Works on any element type supporting + and * (floats or symbols).
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("check update needs at least one input")
    q = len(inputs[0])
    if q & (q - 1) or any(len(v) != q for v in inputs):
        raise ValueError("message vectors must share a power-of-two length")
    out = list(inputs[0])
    for v in inputs[1:]:
        out = _xor_conv(out, list(v))
    if all(isinstance(x, (int, float, np.floating, np.integer)) for x in out):
        return np.array(out, dtype=np.float64)
    return out


def var_update(evidence, inputs=()) -> np.ndarray:
    """Elementwise product of evidence and inputs, normalized to sum 1."""
    out = np.array(evidence, dtype=np.float64)
    for v in inputs:
        out = out * np.asarray(v, dtype=np.float64)
    s = out.sum()
    if not s > 0:
        raise DecodeFailure("contradiction: message product is identically zero")
    return out / s


def sum_bit_decision(final, m_users: int) -> int:
    """argmax over SUM values of the mass at that popcount; ties go low."""
    final = np.asarray(final, dtype=np.float64)
    pc = _popcounts(len(final))
    return int(np.argmax(np.bincount(pc, weights=final, minlength=m_users + 1)))


def _popcounts(q: int) -> np.ndarray:
    return np.array([bin(b).count("1") for b in range(q)], dtype=np.int64)


def sum_decisions(post, m_users: int) -> np.ndarray:
    """Vectorized :func:`sum_bit_decision` over rows."""
    post = np.asarray(post)
    pc = _popcounts(post.shape[1])
    mass = np.zeros((post.shape[0], m_users + 1))
    for s in range(m_users + 1):
        mass[:, s] = post[:, pc == s].sum(axis=1)
    return np.argmax(mass, axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# fast flooding decoder

@dataclass(frozen=True, eq=False)
class TannerGraph:
    """Edge arrays in check-major order plus a variable-major permutation."""

    chk_ptr: np.ndarray
    edge_var: np.ndarray
    var_ptr: np.ndarray
    var_edges: np.ndarray

    @classmethod
    def build(cls, h: ParityCheckMatrix) -> "TannerGraph":
        deg = np.array([len(c) for c in h.checks])
        chk_ptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
        edge_var = np.concatenate([np.array(c, np.int64) for c in h.checks])
        order = np.argsort(edge_var, kind="stable")
        var_deg = np.bincount(edge_var, minlength=h.n)
        var_ptr = np.concatenate([[0], np.cumsum(var_deg)]).astype(np.int64)
        return cls(chk_ptr, edge_var, var_ptr, order.astype(np.int64))


@numba.njit(cache=True, inline="always")
def _wht(x, q):
    if q == 2:
        a, b = x[0], x[1]
        x[0] = a + b
        x[1] = a - b
    elif q == 4:
        a, b, c, d = x[0], x[1], x[2], x[3]
        s0, d0, s1, d1 = a + b, a - b, c + d, c - d
        x[0] = s0 + s1
        x[1] = d0 + d1
        x[2] = s0 - s1
        x[3] = d0 - d1
    else:
        h = 1
        while h < q:
            for i in range(0, q, 2 * h):
                for j in range(i, i + h):
                    a = x[j]
                    b = x[j + h]
                    x[j] = a + b
                    x[j + h] = a - b
            h *= 2


_BP_KERNELS: dict = {}


def _bp_kernel(q: int):
    """BP kernel compiled with the message length as a constant (unrolled)."""
    if q not in _BP_KERNELS:
        _BP_KERNELS[q] = _make_bp_kernel(q)
    return _BP_KERNELS[q]


def _make_bp_kernel(q):
    @numba.njit(cache=True)
    def kernel(ev, chk_ptr, edge_var, var_ptr, var_edges, iterations, floor, tiny):
        """Flooding BP for a batch of codewords.

        ``ev`` is (blocks, N, Q) normalized evidence.  Returns final posteriors of
        the same shape and a per-block status (0 ok, 1 contradiction).
        """
        blocks, n, _ = ev.shape
        n_edges = edge_var.shape[0]
        n_chk = chk_ptr.shape[0] - 1
        post = np.zeros_like(ev)
        status = np.zeros(blocks, np.int64)
        v2c = np.empty((n_edges, q))
        c2v = np.empty((n_edges, q))
        max_deg = 0
        for c in range(n_chk):
            max_deg = max(max_deg, chk_ptr[c + 1] - chk_ptr[c])
        for v in range(n):
            max_deg = max(max_deg, var_ptr[v + 1] - var_ptr[v])
        fwd = np.empty((max_deg + 1, q))
        bwd = np.empty((max_deg + 1, q))
        tmp = np.empty(q)
        for blk in range(blocks):
            e_b = ev[blk]
            for e in range(n_edges):
                for b in range(q):
                    v2c[e, b] = e_b[edge_var[e], b]
            failed = False
            for it in range(iterations):
                # check nodes: leave-one-out products in the Walsh-Hadamard domain
                for c in range(n_chk):
                    lo = chk_ptr[c]
                    d = chk_ptr[c + 1] - lo
                    for b in range(q):
                        fwd[0, b] = 1.0
                        bwd[d, b] = 1.0
                    for i in range(d):
                        for b in range(q):
                            tmp[b] = v2c[lo + i, b]
                        _wht(tmp, q)
                        for b in range(q):
                            fwd[i + 1, b] = fwd[i, b] * tmp[b]
                            c2v[lo + i, b] = tmp[b]
                    for i in range(d - 1, -1, -1):
                        for b in range(q):
                            bwd[i, b] = bwd[i + 1, b] * c2v[lo + i, b]
                    for i in range(d):
                        for b in range(q):
                            tmp[b] = fwd[i, b] * bwd[i + 1, b]
                        _wht(tmp, q)
                        s = 0.0
                        for b in range(q):
                            x = tmp[b] if tmp[b] > 0.0 else 0.0
                            tmp[b] = x
                            s += x
                        if not s > 0.0:
                            failed = True
                            break
                        r = 1.0 / s
                        for b in range(q):
                            c2v[lo + i, b] = max(tmp[b] * r, floor)
                    if failed:
                        break
                if failed:
                    break
                # variable nodes: evidence times all other incoming messages
                for v in range(n):
                    lo = var_ptr[v]
                    d = var_ptr[v + 1] - lo
                    for b in range(q):
                        x = e_b[v, b]
                        fwd[0, b] = tiny if 0.0 < x < tiny else x
                        bwd[d, b] = 1.0
                    for i in range(d):
                        e = var_edges[lo + i]
                        s = 0.0
                        for b in range(q):
                            x = fwd[i, b] * c2v[e, b]
                            fwd[i + 1, b] = x
                            s += x
                        if s > 0.0:
                            r = 1.0 / s
                            for b in range(q):
                                x = fwd[i + 1, b] * r
                                fwd[i + 1, b] = tiny if 0.0 < x < tiny else x
                    for i in range(d - 1, -1, -1):
                        e = var_edges[lo + i]
                        s = 0.0
                        for b in range(q):
                            x = bwd[i + 1, b] * c2v[e, b]
                            bwd[i, b] = x
                            s += x
                        if s > 0.0:
                            r = 1.0 / s
                            for b in range(q):
                                x = bwd[i, b] * r
                                bwd[i, b] = tiny if 0.0 < x < tiny else x
                    for i in range(d):
                        e = var_edges[lo + i]
                        s = 0.0
                        for b in range(q):
                            x = fwd[i, b] * bwd[i + 1, b]
                            tmp[b] = x
                            s += x
                        if not s > 0.0:
                            failed = True
                            break
                        r = 1.0 / s
                        for b in range(q):
                            v2c[e, b] = max(tmp[b] * r, floor)
                    if failed:
                        break
                if failed:
                    break
            if failed:
                status[blk] = 1
                continue
            for v in range(n):
                lo = var_ptr[v]
                d = var_ptr[v + 1] - lo
                for b in range(q):
                    tmp[b] = e_b[v, b]
                for i in range(d):
                    e = var_edges[lo + i]
                    s = 0.0
                    for b in range(q):
                        tmp[b] *= c2v[e, b]
                        s += tmp[b]
                    if not s > 0.0:
                        break
                    for b in range(q):
                        x = tmp[b] / s
                        tmp[b] = tiny if 0.0 < x < tiny else x
                s = 0.0
                for b in range(q):
                    s += tmp[b]
                if not s > 0.0:
                    status[blk] = 1
                    break
                for b in range(q):
                    post[blk, v, b] = tmp[b] / s
        return post, status

    return kernel


def _blocks(lh, h: ParityCheckMatrix, m_users: int) -> np.ndarray:
    lh = np.asarray(lh, dtype=np.float64)
    q = 1 << m_users
    if lh.ndim != 2 or lh.shape[1] != q:
        raise ValueError(f"likelihood grid must be (positions, {q})")
    if lh.shape[0] == 0 or lh.shape[0] % h.n:
        raise ValueError(f"positions must be a positive multiple of N={h.n}")
    if not np.all(np.isfinite(lh)):
        raise ValueError("likelihoods must be finite")
    return init_messages(lh).reshape(-1, h.n, q)


def bp_posteriors(
    lh, h: ParityCheckMatrix, m_users: int, iterations: int = DEFAULT_ITERATIONS
) -> tuple[np.ndarray, np.ndarray]:
    """Final per-variable posteriors (blocks, N, 2^M) and per-block failure flags."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    ev = _blocks(lh, h, m_users)
    g = h.graph
    post, status = _bp_kernel(ev.shape[2])(
        ev, g.chk_ptr, g.edge_var, g.var_ptr, g.var_edges, int(iterations), FLOOR, TINY
    )
    return post, status.astype(bool)


def ldpc_jt_decode(
    lh, h: ParityCheckMatrix, m_users: int, iterations: int = DEFAULT_ITERATIONS,
    allow_failure: bool = False,
) -> np.ndarray:
    """Joint BP SUM decoder; ``lh`` may hold several consecutive codewords.

    Returns the SUM word at the systematic positions of every block.  A
    contradiction raises :class:`DecodeFailure` unless ``allow_failure``, in
    which case failed blocks come back as -1.
    """
    post, failed = bp_posteriors(lh, h, m_users, iterations)
    info = h.info_positions
    out = sum_decisions(post[:, info, :].reshape(-1, 1 << m_users), m_users)
    out = out.reshape(len(failed), -1)
    if failed.any():
        if not allow_failure:
            raise DecodeFailure("belief propagation contradiction")
        out[failed] = -1
    return out.reshape(-1)


def ldpc_psud_decode(
    lh, h: ParityCheckMatrix, m_users: int, iterations: int = DEFAULT_ITERATIONS,
    allow_failure: bool = False,
) -> np.ndarray:
    """Per-user marginal evidence, single-user BP per user, SUM of decisions."""
    lh = np.asarray(lh, dtype=np.float64)
    total = None
    failed = None
    for u in range(m_users):
        marg = lh if m_users == 1 else marginal_likelihoods(lh, u)
        post, f = bp_posteriors(marg, h, 1, iterations)
        bits = np.argmax(post[:, h.info_positions, :], axis=2)
        total = bits if total is None else total + bits
        failed = f if failed is None else failed | f
    if failed.any():
        if not allow_failure:
            raise DecodeFailure("belief propagation contradiction")
        total[failed] = -1
    return total.reshape(-1).astype(np.int64)
