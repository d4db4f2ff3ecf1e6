"""Cycle-level behavioral model of the output-stationary systolic array.

Row ``i`` of A enters the left edge ``i`` cycles late and column ``j`` of B
enters the top edge ``j`` cycles late; operands advance one cell per cycle
through registers.  Cell ``(i, j)`` therefore sees the pair for step ``k`` at
cycle ``i + j + k`` and its output is final after cycle ``i + j + K``.  The
array then drains one column per cycle, so a tile takes
``2(S-1) + K + S`` cycles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .arith import (K_MAX, accumulate, ape_core_fn, mac_step, mult_fn, pau_condition)
from .config import TpuConfig

__all__ = ["SimError", "SimResult", "cycle_count", "simulate", "mac_fold", "reference_matmul", "tiled_matmul"]


class SimError(ValueError):
    pass


@dataclass
class SimResult:
    c: list
    cycles: int
    overflow_flags: list
    mac_events: int = 0
    compute_cycles: int = 0

    def to_dict(self) -> dict:
        return {"c": self.c, "cycles": self.cycles, "overflow_flags": self.overflow_flags}


def cycle_count(S: int, K: int) -> int:
    return 2 * (S - 1) + K + S


def _as_matrix(M, name) -> list:
    try:
        rows = [[int(v) for v in row] for row in M]
    except (TypeError, ValueError):
        raise SimError(f"{name} must be a 2-D integer matrix") from None
    if not rows or not rows[0] or any(len(r) != len(rows[0]) for r in rows):
        raise SimError(f"{name} must be a non-empty rectangular matrix")
    return rows


def _check_range(M, bits, name):
    limit = 1 << bits
    for r in M:
        for v in r:
            if not 0 <= v < limit:
                raise SimError(f"{name} entry {v} does not fit in {bits} unsigned bits")


def simulate(cfg: TpuConfig, A, B, share_pau: bool = True) -> SimResult:
    """Run one S x S output tile: A is S x K, B is K x S.

    With ``share_pau`` every streamed operand is conditioned once at the
    array edge (one PAU per row and per column) and cells run only the
    core multiply; otherwise each cell runs the full multiplier.
    """
    A, B = _as_matrix(A, "A"), _as_matrix(B, "B")
    S = cfg.S
    K = len(B)
    if len(A) != S or len(B[0]) != S:
        raise SimError(f"one tile needs A of {S} rows and B of {S} columns; "
                       f"got {len(A)}x{len(A[0])} and {len(B)}x{len(B[0])}")
    if len(A[0]) != K:
        raise SimError(f"inner dimensions differ: {len(A[0])} vs {K}")
    if K > K_MAX:
        raise SimError(f"K={K} exceeds the accumulator guard range {K_MAX}; tile along K")
    _check_range(A, cfg.dw, "A")
    _check_range(B, cfg.ww, "B")
    W = cfg.width
    mac = cfg.mac_config()
    if share_pau:
        rows = [[pau_condition(cfg.mult, W, A[i][k]) for k in range(K)] for i in range(S)]
        cols = [[pau_condition(cfg.mult, W, B[k][j]) for k in range(K)] for j in range(S)]
        core = ape_core_fn(cfg.mult, W)

        def product(i, j, k):
            return core(rows[i][k], cols[j][k])
    else:
        mul = mult_fn(cfg.mult, W)

        def product(i, j, k):
            return mul(A[i][k], B[k][j])

    acc = [[0] * S for _ in range(S)]
    ovf = [[False] * S for _ in range(S)]
    # registers hold the step index k of the operand a cell passes on, or -1
    a_reg = [[-1] * S for _ in range(S)]
    b_reg = [[-1] * S for _ in range(S)]
    events, last_event = 0, -1
    t = 0
    horizon = 2 * (S - 1) + K
    while t < horizon or any(v >= 0 for r in a_reg for v in r):
        new_a = [[-1] * S for _ in range(S)]
        new_b = [[-1] * S for _ in range(S)]
        for i in range(S):
            for j in range(S):
                if j == 0:
                    ka = t - i if 0 <= t - i < K else -1
                else:
                    ka = a_reg[i][j - 1]
                if i == 0:
                    kb = t - j if 0 <= t - j < K else -1
                else:
                    kb = b_reg[i - 1][j]
                new_a[i][j], new_b[i][j] = ka, kb
                if ka >= 0 and kb >= 0:
                    if ka != kb:
                        raise SimError(f"skew misalignment at cell ({i},{j}) cycle {t}")
                    acc[i][j], wrapped = accumulate(mac, acc[i][j], product(i, j, ka))
                    ovf[i][j] = ovf[i][j] or wrapped
                    events += 1
                    last_event = t
        a_reg, b_reg = new_a, new_b
        t += 1
    compute = last_event + 1
    cycles = compute + S
    if events != S * S * K or cycles != cycle_count(S, K):
        raise SimError(f"schedule broke the cycle law: {events} MACs, {cycles} cycles")
    return SimResult(acc, cycles, ovf, events, compute)


def mac_fold(cfg: TpuConfig, A, B) -> list:
    """Scalar reference: fold mac_step over k for every output element."""
    A, B = _as_matrix(A, "A"), _as_matrix(B, "B")
    mac = cfg.mac_config()
    K = len(B)
    if len(A[0]) != K:
        raise SimError("inner dimensions differ")
    out = []
    for i in range(len(A)):
        row = []
        for j in range(len(B[0])):
            acc = 0
            for k in range(K):
                acc = mac_step(mac, acc, A[i][k], B[k][j])
            row.append(acc)
        out.append(row)
    return out


def reference_matmul(A, B) -> list:
    """Exact integer matrix product."""
    A, B = _as_matrix(A, "A"), _as_matrix(B, "B")
    if len(A[0]) != len(B):
        raise SimError(f"cannot multiply {len(A)}x{len(A[0])} by {len(B)}x{len(B[0])}")
    cols = list(zip(*B))
    return [[sum(a * b for a, b in zip(row, col)) for col in cols] for row in A]


def tiled_matmul(cfg: TpuConfig, A, B) -> tuple:
    """Any M x K by K x N product on the S x S array; returns (C, total cycles).

    Output tiles are zero-padded to S x S; K is split into chunks of at most
    K_MAX whose partial tiles are summed exactly modulo 2**acc_width.
    """
    A, B = _as_matrix(A, "A"), _as_matrix(B, "B")
    M, K, N = len(A), len(A[0]), len(B[0])
    if len(B) != K:
        raise SimError(f"cannot multiply {M}x{K} by {len(B)}x{N}")
    S = cfg.S
    mask = (1 << cfg.acc_width) - 1
    C = [[0] * N for _ in range(M)]
    cycles = 0
    for r0 in range(0, M, S):
        for c0 in range(0, N, S):
            for k0 in range(0, K, K_MAX):
                k1 = min(K, k0 + K_MAX)
                At = [[A[r][k] if r < M else 0 for k in range(k0, k1)] for r in range(r0, r0 + S)]
                Bt = [[B[k][c] if c < N else 0 for c in range(c0, c0 + S)] for k in range(k0, k1)]
                res = simulate(cfg, At, Bt)
                cycles += res.cycles
                for i in range(min(S, M - r0)):
                    for j in range(min(S, N - c0)):
                        C[r0 + i][c0 + j] = (C[r0 + i][c0 + j] + res.c[i][j]) & mask
    return C, cycles
