"""Variate path: delay-aware causal linear attention with rotary encoding.

A query token (a, l) attends to key tokens (b, j) of every variate whose
shifted position j + delta_ab does not exceed l. Keys are rotated at their
effective position j + delta_ab and queries at l, so attention scores
depend only on the effective relative delay. The production path runs on
prefix accumulators (chunked running sums) and never materializes an
(N*L) x (N*L) matrix; a literal double-sum transcription is kept as the
test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .delay import DelayPriors
from .embedding import VARIATE_MAJOR, TokenGrid
from .errors import ConfigError, ContractError

_PHI_TINY = 1e-30
ATTN_EPS = 1e-6


@dataclass
class RotaryTable:
    """Per-dimension-pair angular frequencies (geometric schedule)."""

    dim: int
    base: float = 10000.0
    max_position: int = 4096
    theta: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.dim % 2:
            raise ConfigError("rotary dimension must be even")
        half = self.dim // 2
        self.theta = self.base ** (-np.arange(half) * 2.0 / self.dim)

    def cos_sin(self, pos):
        ang = np.asarray(pos, dtype=np.float64)[..., None] * self.theta
        return np.cos(ang), np.sin(ang)


def _rope_apply(arr, cos, sin):
    e = arr[..., 0::2]
    o = arr[..., 1::2]
    out = np.empty_like(arr)
    out[..., 0::2] = e * cos - o * sin
    out[..., 1::2] = e * sin + o * cos
    return out


def rope_rotate(x, pos, table: RotaryTable):
    """Rotate feature pairs of x by pos * theta_i.

    `x` is [..., D] with D even; `pos` is an int or an array broadcasting
    against the token axes. Norm-preserving; position 0 is the identity.
    """
    x = T._wrap(x)
    if x.shape[-1] != table.dim:
        raise ConfigError(
            f"rotary table dim {table.dim} does not match input {x.shape[-1]}")
    cos, sin = table.cos_sin(pos)

    def bwd(g):
        return (_rope_apply(g, cos, -sin),)

    return T._make(_rope_apply(x.data, cos, sin), (x,), bwd)


def kernel_phi(x, p: int = 3):
    """Nonnegative feature map: f(ReLU(x)) with f(r) = (|r|/|r^p|) r^p.

    Norms are over the last axis. The output norm equals |ReLU(x)| and a
    zero input maps to zero.
    """
    if p < 1:
        raise ConfigError("kernel power must be >= 1")
    x = T._wrap(x)
    r = T.relu(x)
    if p == 1:
        return r
    rp = T.power(r, p)
    n1 = T.tsqrt(T.add(T.tsum(T.mul(r, r), axis=-1, keepdims=True), _PHI_TINY))
    n2 = T.tsqrt(T.add(T.tsum(T.mul(rp, rp), axis=-1, keepdims=True), _PHI_TINY))
    return T.mul(rp, T.div(n1, n2))


def causal_linear_attention(q, k, v, chunk: int = 64):
    """out[l] = q_l^T * sum_{j <= l} k_j v_j^T, via chunked prefix sums.

    q, k: [..., L, Dk]; v: [..., L, Dv].
    """
    q, k, v = T._wrap(q), T._wrap(k), T._wrap(v)
    L = q.shape[-2]
    Dk, Dv = k.shape[-1], v.shape[-1]
    c = min(chunk, L)
    pad = (-L) % c
    if pad:
        q = T.pad_last2(q, -2, pad)
        k = T.pad_last2(k, -2, pad)
        v = T.pad_last2(v, -2, pad)
    nb = (L + pad) // c
    qb = T.reshape(q, q.shape[:-2] + (nb, c, Dk))
    kb = T.reshape(k, k.shape[:-2] + (nb, c, Dk))
    vb = T.reshape(v, v.shape[:-2] + (nb, c, Dv))
    mask = np.tril(np.ones((c, c)))
    intra = T.matmul(T.mul(T.matmul(qb, T.swapaxes(kb, -1, -2)), mask), vb)
    lead = np.broadcast_shapes(q.shape[:-2], k.shape[:-2], v.shape[:-2])
    state = T.Tensor(np.zeros(lead + (Dk, Dv)))
    inter = []
    for i in range(nb):
        blk = (Ellipsis, i, slice(None), slice(None))
        q_i = T.getitem(qb, blk)
        inter.append(T.matmul(q_i, state))
        state = T.add(state, T.matmul(
            T.swapaxes(T.getitem(kb, blk), -1, -2), T.getitem(vb, blk)))
    inter = T.concat(
        [T.reshape(t, t.shape[:-2] + (1, c, Dv)) for t in inter], axis=-3)
    out = T.add(intra, inter)
    out = T.reshape(out, out.shape[:-3] + (L + pad, Dv))
    if pad:
        out = T.getitem(out, (Ellipsis, slice(0, L), slice(None)))
    return out


@dataclass
class DalaInputs:
    q: T.Tensor  # [..., L, N, Du]
    k: T.Tensor
    v: T.Tensor
    priors: DelayPriors
    p: int = 3
    gate: T.Tensor | None = None


def _shifted_stream(src: T.Tensor, delta: int, L: int):
    """Align a per-token stream so entry l holds token j = l - delta.

    Out-of-range entries are zero. Returns (stream, lo, hi) with the valid
    half-open range [lo, hi) of l.
    """
    lo = max(0, delta)
    hi = min(L, L + delta)
    if hi <= lo:
        shape = src.shape[:-2] + (L, src.shape[-1])
        return T.Tensor(np.zeros(shape)), lo, lo
    body = T.getitem(src, (Ellipsis, slice(lo - delta, hi - delta), slice(None)))
    parts = []
    if lo:
        parts.append(T.zeros(src.shape[:-2] + (lo, src.shape[-1])))
    parts.append(body)
    if L - hi:
        parts.append(T.zeros(src.shape[:-2] + (L - hi, src.shape[-1])))
    stream = T.concat(parts, axis=-2) if len(parts) > 1 else body
    return stream, lo, hi


def dala_attention(inp: DalaInputs, table: RotaryTable | None = None,
                   eps: float = ATTN_EPS, rotated_denominator: bool = False,
                   chunk: int = 64) -> T.Tensor:
    """Delay-aware causal linear attention over a variate-major grid."""
    q, k, v = T._wrap(inp.q), T._wrap(inp.k), T._wrap(inp.v)
    L, N, Du = q.shape[-3], q.shape[-2], q.shape[-1]
    if inp.priors.n_variates != N:
        raise ContractError(
            f"priors are {inp.priors.n_variates}x{inp.priors.n_variates} "
            f"but the grid has {N} variates")
    if table is None:
        table = RotaryTable(dim=Du, max_position=max(L, 1))
    rho = inp.priors.rho_weights()
    delta = inp.priors.delta_tok
    positions = np.arange(L)

    # [..., N, L, Du] is more convenient for the per-pair loop
    qn = T.swapaxes(q, -3, -2)
    kn = T.swapaxes(k, -3, -2)
    vn = T.swapaxes(v, -3, -2)
    phi_q = kernel_phi(qn, inp.p)
    phi_k = kernel_phi(kn, inp.p)
    q_rot = rope_rotate(phi_q, positions, table)

    outs = []
    for a in range(N):
        sl_a = (Ellipsis, a, slice(None), slice(None))
        qr_a = T.getitem(q_rot, sl_a)
        pq_a = T.getitem(phi_q, sl_a)
        num = None
        den = None
        key_count = np.zeros(L)
        for b in range(N):
            w = float(rho[a, b])
            if w == 0.0:
                continue
            d_ab = int(delta[a, b])
            pk_b = T.getitem(phi_k, (Ellipsis, b, slice(None), slice(None)))
            v_b = T.getitem(vn, (Ellipsis, b, slice(None), slice(None)))
            k_stream, lo, hi = _shifted_stream(pk_b, d_ab, L)
            if hi <= lo:
                continue
            v_stream, _, _ = _shifted_stream(v_b, d_ab, L)
            # keys live at their effective positions
            k_rot = rope_rotate(k_stream, positions, table)
            num_ab = causal_linear_attention(qr_a, k_rot, v_stream, chunk)
            den_feats = k_rot if rotated_denominator else k_stream
            den_q = qr_a if rotated_denominator else pq_a
            den_ab = T.tsum(T.mul(den_q, T.cumsum(den_feats, axis=-2)),
                            axis=-1, keepdims=True)
            num = T.mul(num_ab, w) if num is None else T.add(num, T.mul(num_ab, w))
            den = T.mul(den_ab, w) if den is None else T.add(den, T.mul(den_ab, w))
            counts = np.zeros(L)
            counts[lo:] = np.arange(1, L - lo + 1).clip(max=hi - lo)
            key_count += counts
        if num is None:
            # no pair contributes anywhere: fall back to the own token
            y_a = T.getitem(vn, sl_a)
        else:
            y_a = T.div(num, T.maximum(den, eps))
            empty = key_count == 0
            if empty.any():
                keep = (~empty).astype(np.float64)[:, None]
                y_a = T.add(T.mul(y_a, keep),
                            T.mul(T.getitem(vn, sl_a), 1.0 - keep))
        outs.append(T.reshape(y_a, y_a.shape[:-2] + (1, L, Du)))
    y = T.concat(outs, axis=-3)          # [..., N, L, Du]
    return T.swapaxes(y, -3, -2)         # [..., L, N, Du]


def _phi_np(x: np.ndarray, p: int) -> np.ndarray:
    r = np.maximum(x, 0.0)
    if p == 1:
        return r
    rp = r ** p
    n1 = np.linalg.norm(r, axis=-1, keepdims=True)
    n2 = np.linalg.norm(rp, axis=-1, keepdims=True)
    scale = np.where(n2 > 0, n1 / np.where(n2 > 0, n2, 1.0), 0.0)
    return rp * scale


def naive_dala_oracle(inp: DalaInputs, table: RotaryTable | None = None,
                      eps: float = ATTN_EPS,
                      rotated_denominator: bool = False) -> np.ndarray:
    """Literal double-sum evaluation of the attention equation.

    Quadratic in N*L; small instances only. Unbatched inputs [L, N, Du].
    """
    q = inp.q.data if isinstance(inp.q, T.Tensor) else np.asarray(inp.q)
    k = inp.k.data if isinstance(inp.k, T.Tensor) else np.asarray(inp.k)
    v = inp.v.data if isinstance(inp.v, T.Tensor) else np.asarray(inp.v)
    L, N, Du = q.shape
    if table is None:
        table = RotaryTable(dim=Du, max_position=max(L, 1))
    rho = inp.priors.rho_weights()
    delta = inp.priors.delta_tok

    def rot(vec, pos):
        cos, sin = table.cos_sin(pos)
        return _rope_apply(vec, cos, sin)

    y = np.zeros((L, N, Du))
    for a in range(N):
        for l in range(L):
            pq = _phi_np(q[l, a], inp.p)
            pq_rot = rot(pq, l)
            num = np.zeros(Du)
            den = 0.0
            n_keys = 0
            for b in range(N):
                w = rho[a, b]
                if w == 0.0:
                    continue
                d_ab = int(delta[a, b])
                for j in range(L):
                    if j + d_ab > l or j + d_ab < 0:
                        continue
                    n_keys += 1
                    pk = _phi_np(k[j, b], inp.p)
                    pk_eff = rot(pk, j + d_ab)
                    num += w * (pq_rot @ pk_eff) * v[j, b]
                    if rotated_denominator:
                        den += w * (pq_rot @ pk_eff)
                    else:
                        den += w * (pq @ pk)
            if n_keys == 0:
                y[l, a] = v[l, a]
            else:
                y[l, a] = num / max(den, eps)
    return y


@dataclass
class DalaParams:
    """Weights of one Mamba-DALA module."""

    w_content: T.Tensor  # [D, Du]
    b_content: T.Tensor
    w_gate: T.Tensor     # [D, Du]
    b_gate: T.Tensor
    w_q: T.Tensor        # [Du, Du]
    w_k: T.Tensor
    w_v: T.Tensor
    w_out: T.Tensor      # [Du, D]
    b_out: T.Tensor
    kernel_power: int = 3
    eps: float = ATTN_EPS
    rotated_denominator: bool = False
    chunk: int = 64

    @staticmethod
    def init(D: int, Du: int, rng: np.random.Generator, kernel_power: int = 3,
             rotated_denominator: bool = False, chunk: int = 64) -> "DalaParams":
        def lin(n_in, n_out):
            return T.Tensor(rng.normal(0, 1 / np.sqrt(n_in), (n_in, n_out)),
                            requires_grad=True)

        return DalaParams(
            w_content=lin(D, Du),
            b_content=T.Tensor(np.zeros(Du), requires_grad=True),
            w_gate=lin(D, Du),
            b_gate=T.Tensor(np.zeros(Du), requires_grad=True),
            w_q=lin(Du, Du), w_k=lin(Du, Du), w_v=lin(Du, Du),
            w_out=lin(Du, D),
            b_out=T.Tensor(np.zeros(D), requires_grad=True),
            kernel_power=kernel_power,
            rotated_denominator=rotated_denominator,
            chunk=chunk,
        )

    def parameters(self, prefix: str):
        names = ["w_content", "b_content", "w_gate", "b_gate",
                 "w_q", "w_k", "w_v", "w_out", "b_out"]
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


def mamba_dala_forward(grid: TokenGrid, priors: DelayPriors,
                       params: DalaParams,
                       table: RotaryTable | None = None) -> TokenGrid:
    """Full variate-path module on a variate-major token grid."""
    if grid.layout != VARIATE_MAJOR:
        raise ContractError("mamba_dala_forward expects a variate-major grid")
    x = grid.tokens
    content = T.add(T.matmul(x, params.w_content), params.b_content)
    gate = T.add(T.matmul(x, params.w_gate), params.b_gate)
    inp = DalaInputs(
        q=T.matmul(content, params.w_q),
        k=T.matmul(content, params.w_k),
        v=T.matmul(content, params.w_v),
        priors=priors,
        p=params.kernel_power,
        gate=gate,
    )
    y = dala_attention(inp, table=table, eps=params.eps,
                       rotated_denominator=params.rotated_denominator,
                       chunk=params.chunk)
    out = T.add(T.matmul(T.mul(y, T.sigmoid(gate)), params.w_out), params.b_out)
    return TokenGrid(layout=VARIATE_MAJOR, tokens=out,
                     patch_len=grid.patch_len, stride=grid.stride)
