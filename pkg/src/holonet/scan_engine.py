"""Path-ordered products of orthogonal operators, three ways.

sequential: one operator product with polar re-orthonormalization every K
steps. tree: pairwise associative reduction (log-depth), batched matmuls
with a worker pool over stack slices, one inverse-free Newton-Schulz
orthogonalization pass per level. streaming: state-only evolution with O(1)
auxiliary memory, tracked by an explicit allocation meter.

Operators are memoized per vocabulary token, so a run computes at most
|vocab| matrix exponentials regardless of sequence length.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import ArgumentError
from .models import HolonomicParams


@dataclass(frozen=True)
class ScanPlan:
    mode: str = "sequential"      # sequential | tree | streaming
    renorm_interval: int = 64     # K
    precision: int = 64

    def __post_init__(self):
        if self.mode not in ("sequential", "tree", "streaming"):
            raise ArgumentError(f"unknown scan mode: {self.mode}")
        if self.renorm_interval < 1:
            raise ArgumentError("renorm interval must be >= 1")
        if self.precision not in (32, 64):
            raise ArgumentError("precision must be 32 or 64")


@dataclass
class StreamStats:
    steps: int = 0
    renorms: int = 0
    peak_aux_floats: int = 0
    _live: int = field(default=0, repr=False)

    def alloc(self, count: int) -> None:
        self._live += count
        self.peak_aux_floats = max(self.peak_aux_floats, self._live)

    def free(self, count: int) -> None:
        self._live -= count


def build_operators(p: HolonomicParams, precision: int = 64) -> np.ndarray:
    """exp(M_t - M_t^T) per vocabulary token, in the requested precision."""
    ops = p.operators()
    return ops.astype(np.float32) if precision == 32 else ops


def sequential_holonomy(p: HolonomicParams, tokens, plan: ScanPlan = ScanPlan(),
                        operators: np.ndarray | None = None) -> np.ndarray:
    """H_L = U_L ... U_1 with re-orthonormalization every K steps."""
    if len(tokens) == 0:
        raise ArgumentError("sequential_holonomy: empty token sequence")
    ops = operators if operators is not None else build_operators(p, plan.precision)
    h = np.eye(p.n, dtype=ops.dtype)
    for i, tok in enumerate(tokens):
        h = ops[tok] @ h
        if (i + 1) % plan.renorm_interval == 0:
            h = tc.reorthonormalize(h.astype(np.float64)).astype(ops.dtype)
    return h


def _newton_schulz(stack: np.ndarray) -> np.ndarray:
    """One inverse-free orthogonalization pass over a stack of near-orthogonal
    matrices: X <- X (3 I - X^T X) / 2."""
    n = stack.shape[-1]
    xtx = stack.transpose(0, 2, 1) @ stack
    return stack @ (1.5 * np.eye(n, dtype=stack.dtype) - 0.5 * xtx)


def _pair_reduce(stack: np.ndarray, workers: int) -> np.ndarray:
    """Combine adjacent pairs: out[i] = stack[2i+1] @ stack[2i] (later factors
    act on the left); an odd trailing element is carried up unchanged."""
    pairs = stack.shape[0] // 2
    left = stack[0:2 * pairs:2]
    right = stack[1:2 * pairs:2]
    out = np.empty_like(left)
    if workers > 1 and pairs >= 2 * workers:
        bounds = np.linspace(0, pairs, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(np.matmul, right[a:b], left[a:b], out=out[a:b])
                for a, b in zip(bounds[:-1], bounds[1:])
            ]
            for f in futures:
                f.result()
    else:
        np.matmul(right, left, out=out)
    if stack.shape[0] % 2:
        out = np.concatenate([out, stack[-1:]], axis=0)
    return out


def tree_scan_holonomy(p: HolonomicParams, tokens, plan: ScanPlan = ScanPlan(),
                       workers: int = 1,
                       operators: np.ndarray | None = None) -> np.ndarray:
    """Same product as sequential, via binary tree reduction.

    Operand order inside each combine is fixed, so the result does not depend
    on the worker schedule.
    """
    if len(tokens) == 0:
        raise ArgumentError("tree_scan_holonomy: empty token sequence")
    if workers < 1:
        raise ArgumentError("workers must be >= 1")
    ops = operators if operators is not None else build_operators(p, plan.precision)
    stack = ops[np.asarray(tokens, dtype=np.intp)]
    while stack.shape[0] > 1:
        stack = _pair_reduce(stack, workers)
        stack = _newton_schulz(stack)
    return stack[0]


def streaming_infer(p: HolonomicParams, token_stream,
                    plan: ScanPlan = ScanPlan(),
                    operators: np.ndarray | None = None,
                    track_operator: bool = False):
    """Consume tokens one at a time, keeping only the current state.

    Returns (state, stats) or (state, operator, stats) when the accumulated
    operator is requested (needed for Jacobian measurement). The stats meter
    counts live auxiliary floats; its peak is independent of stream length.
    """
    stats = StreamStats()
    ops = operators if operators is not None else build_operators(p, plan.precision)
    stats.alloc(ops.size)
    h = p.h0.astype(ops.dtype, copy=True)
    stats.alloc(h.size)
    target_norm = float(np.linalg.norm(h))
    acc = None
    if track_operator:
        acc = np.eye(p.n, dtype=ops.dtype)
        stats.alloc(acc.size)
    for tok in token_stream:
        if not 0 <= tok < p.vocab:
            raise ArgumentError(f"token {tok} outside vocabulary of size {p.vocab}")
        nxt = ops[tok] @ h
        stats.alloc(nxt.size)
        stats.free(h.size)
        h = nxt
        if track_operator:
            nacc = ops[tok] @ acc
            stats.alloc(nacc.size)
            stats.free(acc.size)
            acc = nacc
        stats.steps += 1
        if stats.steps % plan.renorm_interval == 0:
            norm = float(np.linalg.norm(h))
            if norm > 0:
                h = h * (target_norm / norm)
            if track_operator:
                acc = tc.reorthonormalize(acc.astype(np.float64)).astype(ops.dtype)
            stats.renorms += 1
    if track_operator:
        return h, acc, stats
    return h, stats


def orthogonality_drift(h: np.ndarray) -> float:
    return float(np.linalg.norm(h.T @ h - np.eye(h.shape[0]), "fro"))


def bench_scan(p: HolonomicParams, lengths, workers: int = 1,
               rng: tc.RngState | None = None,
               plan: ScanPlan = ScanPlan()) -> list[dict]:
    """Wall-clock rows for the benchmark CSV: mode,N,L,workers,wall_ms,ortho_drift."""
    import time

    rng = rng or tc.RngState(0)
    ops = build_operators(p, plan.precision)
    rows = []
    for li, length in enumerate(lengths):
        tokens = rng.child(li).generator().integers(0, p.vocab, size=length)
        for mode, fn in (
            ("sequential", lambda: sequential_holonomy(p, tokens, plan, ops)),
            ("tree", lambda: tree_scan_holonomy(p, tokens, plan, workers, ops)),
        ):
            start = time.perf_counter()
            h = fn()
            wall_ms = (time.perf_counter() - start) * 1e3
            rows.append({"mode": mode, "N": p.n, "L": int(length),
                         "workers": workers if mode == "tree" else 1,
                         "wall_ms": wall_ms, "ortho_drift": orthogonality_drift(h)})
    return rows
