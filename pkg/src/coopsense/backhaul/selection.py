"""Greedy receiver selection and the low-complexity bit reallocation heuristic."""
from __future__ import annotations

import numpy as np

from ..exceptions import InfeasibleEpsilonError, UnlocalizableError
from ..fusion import FimContext, crlb_theta, epsilon_star, info_weight
from ..scene import Scene
from .mac import build_mac_region, min_channel_uses
from .mcsca import AllocationResult, McscaConfig, mcsca_run

# safety bound on the reallocation loop; eps > eps* guarantees termination long before
MAX_BITS_PER_COMPONENT = 64


def _drop_candidate(result: AllocationResult) -> int:
    """Receiver with the fewest relaxed bits; ties drop the larger id."""
    totals = [float(np.sum(b)) for b in result.relaxed_bits]
    low = min(totals)
    return max(n for n, v in zip(result.omega, totals) if v == low)


def greedy_select(ctx: FimContext, scene: Scene, eps: float,
                  config: McscaConfig | None = None) -> AllocationResult:
    """Drop the least-loaded receiver while the integer channel-use count does not grow.

    Stops on the first drop that raises W* or makes the budget unreachable and
    returns the last accepted allocation.
    """
    omega = [r.receiver_id for r in ctx.receivers]
    ref = epsilon_star(ctx)
    best = mcsca_run(ctx, build_mac_region(scene, omega), eps, config, eps_star=ref)
    while len(best.omega) > 1:
        drop = _drop_candidate(best)
        rest = [n for n in best.omega if n != drop]
        try:
            res = mcsca_run(ctx, build_mac_region(scene, rest), eps, config)
        except (InfeasibleEpsilonError, UnlocalizableError):
            break
        if res.W > best.W:
            break
        best = res
    return best


class _IncrementalFim:
    """CRLB of integer allocations, counting only receivers that send at least one bit."""

    def __init__(self, ctx: FimContext, model: str):
        self.ctx = ctx
        self.model = model
        self.proj = [r.projected for r in ctx.receivers]

    def node_fim(self, i: int, bits) -> np.ndarray:
        r = self.ctx.receivers[i]
        y = info_weight(r.eigvals, r.noise_var, bits, self.model)
        A = self.proj[i]
        return (A * y) @ A.T

    def crlb(self, parts) -> float:
        J = sum(parts, np.zeros((2, 2)))
        try:
            return crlb_theta(J)
        except UnlocalizableError:
            return np.inf


def bit_realloc(ctx: FimContext, scene: Scene, eps: float,
                config: McscaConfig | None = None) -> AllocationResult:
    """One relaxed solve on all receivers, floor, then add single bits greedily until CRLB <= eps.

    Each step adds the bit whose increment gives the smallest CRLB; ties go to
    the smallest (receiver, component). Receivers left with no bits are dropped.
    """
    config = McscaConfig() if config is None else config
    omega = [r.receiver_id for r in ctx.receivers]
    relaxed = mcsca_run(ctx, build_mac_region(scene, omega), eps, config)
    X = [np.floor(np.asarray(b) + 1e-6).astype(int) for b in relaxed.relaxed_bits]
    inc = _IncrementalFim(ctx, config.model)
    parts = [inc.node_fim(i, X[i]) if X[i].sum() > 0 else np.zeros((2, 2)) for i in range(len(X))]
    current = inc.crlb(parts)
    trace = []
    while current > eps:
        best_val, best_nj = np.inf, None
        for i, x in enumerate(X):
            for j in range(x.size):
                if x[j] >= MAX_BITS_PER_COMPONENT:
                    continue
                x[j] += 1
                trial = parts[:i] + [inc.node_fim(i, x)] + parts[i + 1:]
                x[j] -= 1
                val = inc.crlb(trial)
                if val < best_val:
                    best_val, best_nj = val, (i, j)
        if best_nj is None or not best_val < current:
            raise InfeasibleEpsilonError(eps, epsilon_star(ctx))
        i, j = best_nj
        X[i][j] += 1
        parts[i] = inc.node_fim(i, X[i])
        current = best_val
        trace.append({"receiver": omega[i], "component": j, "crlb": current})
    keep = [i for i, x in enumerate(X) if x.sum() > 0]
    sel = tuple(omega[i] for i in keep)
    region = build_mac_region(scene, sel)
    bits = tuple(X[i] for i in keep)
    W = min_channel_uses(np.array([b.sum() for b in bits], dtype=float), region)
    return AllocationResult(
        omega=sel, bits=bits, W=W,
        relaxed_bits=tuple(relaxed.relaxed_bits[i] for i in keep), relaxed_W=relaxed.relaxed_W,
        relaxed_crlb=relaxed.relaxed_crlb, crlb=float(current), eps=float(eps),
        kkt_residual=relaxed.kkt_residual, iterations=relaxed.iterations,
        converged=relaxed.converged, trace=tuple(trace),
    )
