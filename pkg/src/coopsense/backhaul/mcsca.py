"""Quantisation-bit allocation by successive convex approximation with an LMI.

The relaxed problem is: minimise W over real bits X >= 0, W >= 1 and a 2x2
matrix M subject to the MAC constraints sum_S X <= C_S W, the Schur-complement
LMI [[M, I], [I, J(X)]] >= 0 and tr(M) <= eps. Each outer iteration replaces
the per-component information weights y(X) by their tangents at the current
point and solves the resulting convex problem with a log-barrier method.

M is carried in units of eps (M / eps with eps J in the LMI) so that the
budget constraint reads tr(M) <= 1 whatever the scale of the CRLB.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..exceptions import InfeasibleEpsilonError, RestorationRequired, SolverFailure, UnlocalizableError
from ..fusion import FimContext, crlb_theta, info_weight, info_weight_grad
from .mac import MacRegion, min_channel_uses, relaxed_channel_uses

# components whose Jacobian projection is below this (relative) carry no information
ACTIVE_TOL = 1e-10
# relative CRLB margin left inside the budget after a restoration step
RESTORE_MARGIN = 1e-6


@dataclass(frozen=True)
class McscaConfig:
    """Outer-loop and inner-solver settings.

    :param beta0: initial trust radius in bits
    :param decay: beta_t = beta0 / (1 + t)^decay
    :param mu: initial proximal weight; raised tenfold (up to mu_max) whenever a
        subproblem solution violates the true CRLB budget
    :param tol: stop when ||x_{t+1} - x_t|| <= tol (1 + ||x_t||)
    :param gap_tol: barrier duality-gap target of each inner solve
    :param model: quantisation noise model passed to the information weights
    """

    beta0: float = 4.0
    decay: float = 0.7
    mu: float = 1e-3
    mu_max: float = 1.0
    max_iter: int = 200
    tol: float = 1e-4
    gap_tol: float = 1e-8
    model: str = "standard"

    def beta(self, t: int) -> float:
        return self.beta0 / (1.0 + t) ** self.decay


@dataclass(frozen=True)
class SolverIterate:
    """Point x = (X, W, M) of the relaxed problem; M is normalised by eps."""

    X: np.ndarray
    W: float
    M: np.ndarray
    t: int = 0
    beta: float = 0.0
    mu: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.X, [self.W], self.M.ravel()])


@dataclass(frozen=True)
class InnerResult:
    iterate: SolverIterate
    objective: float
    newton_steps: int
    residual: float
    duals: dict = field(repr=False)


@dataclass(frozen=True)
class AllocationResult:
    """Integer allocation and the relaxed solution it was rounded from.

    :param bits: per-receiver integer bit arrays (length 2K_n), aligned with ``omega``
    :param relaxed_bits: per-receiver relaxed bits before rounding
    :param relaxed_crlb: eps tr(M) at the last iterate
    :param crlb: tr(J^{-1}) of the integer allocation over ``omega``
    """

    omega: tuple[int, ...]
    bits: tuple[np.ndarray, ...]
    W: int
    relaxed_bits: tuple[np.ndarray, ...]
    relaxed_W: float
    relaxed_crlb: float
    crlb: float
    eps: float
    kkt_residual: float
    iterations: int
    converged: bool
    trace: tuple[dict, ...] = ()

    @property
    def node_bits(self) -> np.ndarray:
        return np.array([b.sum() for b in self.bits], dtype=float)

    def bits_for(self, receiver_id: int) -> np.ndarray:
        return self.bits[self.omega.index(receiver_id)]


class BitAllocationProblem:
    """Data of the relaxed allocation problem for a fixed node set.

    Only components with a nonzero Jacobian projection are optimisation
    variables; the others add nothing to J and are pinned at zero bits.
    """

    def __init__(self, ctx: FimContext, region: MacRegion, eps: float, model: str = "standard"):
        self.region = region
        self.eps = float(eps)
        self.model = model
        self.receivers = [ctx.receivers[ctx.index_of(n)] for n in region.nodes]
        self.sizes = [r.size for r in self.receivers]
        proj = [r.projected for r in self.receivers]
        scale = max(float(np.max(np.sum(A ** 2, axis=0))) for A in proj)
        if not scale > 0:
            raise UnlocalizableError("no receiver carries position information")
        a, gam, s2, node, comp = [], [], [], [], []
        J_fixed = np.zeros((2, 2))
        for k, (r, A) in enumerate(zip(self.receivers, proj)):
            energy = np.sum(A ** 2, axis=0)
            for j in range(r.size):
                if energy[j] > ACTIVE_TOL * scale:
                    a.append(A[:, j])
                    gam.append(r.eigvals[j])
                    s2.append(r.noise_var)
                    node.append(k)
                    comp.append(j)
                else:
                    y0 = info_weight(r.eigvals[j], r.noise_var, 0.0, model)
                    J_fixed += y0 * np.outer(A[:, j], A[:, j])
        self.a = np.array(a, dtype=float).reshape(-1, 2)
        self.gamma = np.array(gam, dtype=float)
        self.noise_var = np.array(s2, dtype=float)
        self.node = np.array(node, dtype=int)
        self.comp = np.array(comp, dtype=int)
        self.J_fixed = J_fixed
        self.outer = np.einsum("ia,ib->iab", self.a, self.a)
        # node-membership of every active component, per MAC subset
        self.subset_incidence = region.masks[:, self.node].astype(float)
        self.eps_star = crlb_theta(self.fim_limit())

    @property
    def m(self) -> int:
        return self.a.shape[0]

    def weights(self, X):
        return info_weight(self.gamma, self.noise_var, X, self.model)

    def weight_grads(self, X):
        return info_weight_grad(self.gamma, self.noise_var, X, self.model)

    def fim(self, X) -> np.ndarray:
        y = np.atleast_1d(self.weights(X))
        return self.J_fixed + np.einsum("i,iab->ab", y, self.outer)

    def fim_limit(self) -> np.ndarray:
        y = 2.0 / self.noise_var
        return np.einsum("i,iab->ab", y, self.outer)

    def crlb(self, X) -> float:
        return crlb_theta(self.fim(X))

    def crlb_grad(self, X) -> np.ndarray:
        """d tr(J^{-1}) / dX = -y'(X) a^T J^{-2} a."""
        Ji = np.linalg.inv(self.fim(X))
        Ji2 = Ji @ Ji
        return -np.atleast_1d(self.weight_grads(X)) * np.einsum("ia,ab,ib->i", self.a, Ji2, self.a)

    def node_totals(self, X) -> np.ndarray:
        return np.bincount(self.node, weights=np.asarray(X, dtype=float), minlength=self.region.size)

    def expand(self, X, dtype=float) -> tuple[np.ndarray, ...]:
        """Per-receiver full-length bit arrays (inactive components at zero)."""
        out = [np.zeros(s, dtype=dtype) for s in self.sizes]
        for v, k, j in zip(X, self.node, self.comp):
            out[k][j] = v
        return tuple(out)


# -- surrogate ---------------------------------------------------------------

def surrogate_weight(X, X_t, gamma, noise_var, model: str = "standard"):
    """Tangent of the information weight at X_t: (X - X_t) y'(X_t) + y(X_t)."""
    X = np.asarray(X, dtype=float)
    return (X - X_t) * info_weight_grad(gamma, noise_var, X_t, model) + info_weight(gamma, noise_var, X_t, model)


# -- inner convex problem ------------------------------------------------------

_E11 = np.zeros((4, 4)); _E11[0, 0] = 1.0
_E12 = np.zeros((4, 4)); _E12[0, 1] = _E12[1, 0] = 1.0
_E22 = np.zeros((4, 4)); _E22[1, 1] = 1.0


class _InnerProblem:
    """Barrier formulation of one convex subproblem in z = (X, W, m11, m12, m22, s)."""

    def __init__(self, prob: BitAllocationProblem, it: SolverIterate, beta: float, mu: float):
        m = prob.m
        self.m, self.n, self.mu = m, m + 5, mu
        self.iW, self.iS = m, m + 4
        Mt = it.M
        self.zt = np.concatenate([it.X, [it.W, Mt[0, 0], Mt[0, 1], Mt[1, 1], 0.0]])
        self.wq = np.concatenate([np.ones(m), [1.0, 1.0, 2.0, 1.0, 0.0]])
        self.Wt = it.W
        self.r2 = (1.001 * beta) ** 2
        eps = prob.eps
        y = np.atleast_1d(prob.weights(it.X))
        g = np.atleast_1d(prob.weight_grads(it.X))
        J0 = eps * (prob.J_fixed + np.einsum("i,iab->ab", y - g * it.X, prob.outer))
        self.G0 = np.zeros((4, 4))
        self.G0[:2, 2:] = np.eye(2)
        self.G0[2:, :2] = np.eye(2)
        self.G0[2:, 2:] = J0
        A = np.zeros((self.n, 4, 4))
        A[:m, 2:, 2:] = eps * g[:, None, None] * prob.outer
        A[m + 1], A[m + 2], A[m + 3] = _E11, _E12, _E22
        A[m + 4] = -np.eye(4)
        self.A = A
        # scalar constraints L z + b + kappa mu q(z) <= 0
        nS = prob.region.capacity.size
        rows, b, kappa = [], [], []
        r = np.zeros(self.n); r[m + 1] = r[m + 3] = 1.0
        rows.append(r); b.append(-1.0); kappa.append(1.0)            # trace budget
        r = np.zeros(self.n); r[self.iS] = -1.0
        rows.append(r); b.append(0.0); kappa.append(1.0)             # s >= mu q
        mac = np.zeros((nS, self.n))
        mac[:, :m] = prob.subset_incidence
        mac[:, self.iW] = -prob.region.capacity
        rows.extend(mac); b.extend([0.0] * nS); kappa.extend([self.Wt] * nS)
        pos = np.zeros((m, self.n)); pos[np.arange(m), np.arange(m)] = -1.0
        rows.extend(pos); b.extend([0.0] * m); kappa.extend([0.0] * m)
        r = np.zeros(self.n); r[self.iW] = -1.0
        rows.append(r); b.append(1.0); kappa.append(0.0)              # W >= 1
        self.L = np.array(rows)
        self.b = np.array(b)
        self.kappa = np.array(kappa)
        self.n_mac = nS
        self.n_constraints = self.L.shape[0] + 1 + 4

    # pieces
    def q(self, z):
        d = z - self.zt
        return float(np.sum(self.wq * d * d))

    def scalar(self, z):
        return self.L @ z + self.b + self.kappa * self.mu * self.q(z)

    def trust(self, z):
        d = z[:self.m] - self.zt[:self.m]
        return float(d @ d) - self.r2

    def lmi(self, z):
        return self.G0 + np.tensordot(z, self.A, axes=1)

    def f0(self, z):
        return z[self.iW] + self.mu * self.q(z)

    def strictly_feasible(self, z) -> bool:
        if not np.all(np.isfinite(z)):
            return False
        if np.any(self.scalar(z) >= 0) or self.trust(z) >= 0:
            return False
        try:
            np.linalg.cholesky(self.lmi(z))
        except np.linalg.LinAlgError:
            return False
        return True

    def psi(self, z, t):
        c = self.scalar(z)
        ct = self.trust(z)
        sign, logdet = np.linalg.slogdet(self.lmi(z))
        if np.any(c >= 0) or ct >= 0 or sign <= 0:
            return math.inf
        return t * self.f0(z) - float(np.sum(np.log(-c))) - math.log(-ct) - logdet

    def derivatives(self, z, t):
        n, m, mu = self.n, self.m, self.mu
        d = z - self.zt
        gq = 2.0 * self.wq * d
        Hq = np.diag(2.0 * self.wq)
        c = self.scalar(z)
        inv = 1.0 / (-c)
        Gc = self.L + np.outer(self.kappa * mu, gq)
        grad = t * (np.eye(n)[self.iW] + mu * gq) + Gc.T @ inv
        H = t * mu * Hq + (Gc.T * inv ** 2) @ Gc + mu * float(np.sum(self.kappa * inv)) * Hq
        ct = self.trust(z)
        gt = np.zeros(n); gt[:m] = 2.0 * d[:m]
        grad += gt / (-ct)
        H += np.outer(gt, gt) / ct ** 2
        H[:m, :m] += np.eye(m) * (2.0 / (-ct))
        S = np.linalg.inv(self.lmi(z))
        SA = np.einsum("ij,kjl->kil", S, self.A)
        grad -= np.einsum("kii->k", SA)
        H += np.einsum("kij,lji->kl", SA, SA)
        return grad, 0.5 * (H + H.T)

    def duals(self, z, t):
        c = self.scalar(z)
        return {
            "scalar": 1.0 / (t * -c),
            "trust": 1.0 / (t * -self.trust(z)),
            "lmi": np.linalg.inv(self.lmi(z)) / t,
        }


def _newton_direction(H, g):
    try:
        return -cho_solve(cho_factor(H), g)
    except LinAlgError:
        return -np.linalg.lstsq(H, g, rcond=None)[0]


def inner_solve(prob: BitAllocationProblem, it: SolverIterate, beta: float, mu: float,
                gap_tol: float = 1e-8, max_newton: int = 100, t0: float = 1.0) -> InnerResult:
    """Solve the convexified subproblem around ``it`` by a feasible-start barrier method.

    ``it`` must be strictly feasible for its own surrogate: tr(M) < 1, the LMI
    with J(X_t) positive definite, strict MAC slack, X > 0 and W > 1.
    """
    P = _InnerProblem(prob, it, beta, mu)
    z = P.zt.copy()
    G = P.lmi(z)
    lam_min = float(np.linalg.eigvalsh(G)[0])
    z[P.iS] = 0.5 * lam_min
    if not lam_min > 0 or not P.strictly_feasible(z):
        raise RestorationRequired("start point is not strictly feasible")

    # a small first barrier weight recentres a start that hugs the boundary
    t = t0
    steps = 0
    while True:
        for _ in range(max_newton):
            g, H = P.derivatives(z, t)
            dz = _newton_direction(H, g)
            if not np.all(np.isfinite(dz)):
                raise SolverFailure("non-finite Newton step", last_point=z.copy())
            dec = -float(g @ dz)
            if dec / 2.0 <= 1e-9:
                break
            step = 1.0
            while not P.strictly_feasible(z + step * dz):
                step *= 0.5
                if step < 1e-14:
                    break
            f = P.psi(z, t)
            f_new = P.psi(z + step * dz, t)
            while f_new > f - 0.25 * step * dec and step >= 1e-14:
                step *= 0.5
                f_new = P.psi(z + step * dz, t)
            # stalled at floating-point resolution of psi
            if step < 1e-14 or f - f_new <= 1e-14 * max(1.0, abs(f)):
                break
            z = z + step * dz
            steps += 1
        if P.n_constraints / t <= gap_tol:
            break
        t *= 10.0
    X = z[:P.m].copy()
    M = np.array([[z[P.m + 1], z[P.m + 2]], [z[P.m + 2], z[P.m + 3]]])
    nxt = SolverIterate(X=X, W=float(z[P.iW]), M=M, t=it.t + 1, beta=beta, mu=mu)
    c = P.scalar(z)
    residual = max(0.0, float(np.max(c)), P.trust(z), -float(np.linalg.eigvalsh(P.lmi(z))[0]))
    duals = P.duals(z, t)
    duals["s"] = float(z[P.iS])
    return InnerResult(iterate=nxt, objective=P.f0(z), newton_steps=steps, residual=residual, duals=duals)


# -- outer loop ----------------------------------------------------------------

def _lmi_margin(prob: BitAllocationProblem, X, M) -> float:
    G = np.zeros((4, 4))
    G[:2, :2] = M
    G[:2, 2:] = G[2:, :2] = np.eye(2)
    G[2:, 2:] = prob.eps * prob.fim(X)
    return float(np.linalg.eigvalsh(G)[0])


def _raise_information(prob: BitAllocationProblem, X, target: float) -> np.ndarray:
    """Move X along -grad CRLB until CRLB(X) <= target."""
    if prob.crlb(X) <= target:
        return X
    d = np.maximum(-prob.crlb_grad(X), 0.0)
    if not np.any(d > 0):
        raise SolverFailure("no direction decreases the CRLB", last_point=X.copy())
    d = d / np.max(d)
    hi = 1.0
    while prob.crlb(X + hi * d) > target:
        hi *= 2.0
        if hi > 1e4:
            raise SolverFailure("could not restore the CRLB budget", last_point=X.copy())
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if prob.crlb(X + mid * d) <= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-6 * (1.0 + hi):
            break
    return X + hi * d


def restore(prob: BitAllocationProblem, it: SolverIterate) -> tuple[SolverIterate, bool]:
    """Make ``it`` strictly feasible for the subproblem built around it.

    Returns the possibly modified iterate and whether X had to move.
    """
    X = np.maximum(np.asarray(it.X, dtype=float), 1e-9)
    moved = False
    if prob.crlb(X) > prob.eps * (1.0 - 1e-9):
        # smallest move back inside the budget, so restoration does not mask convergence
        X = _raise_information(prob, X, prob.eps * (1.0 - RESTORE_MARGIN))
        moved = True
    M = it.M
    if np.trace(M) >= 1.0 or _lmi_margin(prob, X, M) <= 1e-12:
        Jinv = np.linalg.inv(prob.eps * prob.fim(X))
        room = 1.0 - float(np.trace(Jinv))
        # the shift must stay inside the budget even when X hugs it
        delta = min(max(1e-9 * float(np.trace(Jinv)), min(0.25 * room, 1e-6)), 0.25 * room)
        M = Jinv + delta * np.eye(2)
    need = relaxed_channel_uses(prob.node_totals(X), prob.region)
    W = max(it.W, need * (1.0 + 1e-9) + 1e-12, 1.0 + 1e-9)
    return replace(it, X=X, W=float(W), M=M), moved


def initial_iterate(prob: BitAllocationProblem) -> SolverIterate:
    """Uniform bits at 80% of each node's single-user capacity share, scaled up to meet eps."""
    single = np.array([prob.region.subset_capacity([n]) for n in prob.region.nodes])
    X0 = 0.8 * single[prob.node] / np.array(prob.sizes, dtype=float)[prob.node]
    target = prob.eps - 0.02 * (prob.eps - prob.eps_star)
    scale = 1.0
    while prob.crlb(scale * X0) > target:
        scale *= 2.0
        if scale > 1e6:
            raise SolverFailure("initial allocation cannot reach the CRLB budget", last_point=X0)
    lo = scale / 2.0 if scale > 1.0 else scale
    hi = scale
    for _ in range(50):
        if hi - lo <= 1e-3 * hi:
            break
        mid = 0.5 * (lo + hi)
        if prob.crlb(mid * X0) <= target:
            hi = mid
        else:
            lo = mid
    X = hi * X0
    Jinv = np.linalg.inv(prob.eps * prob.fim(X))
    room = 1.0 - float(np.trace(Jinv))
    M = Jinv + min(0.25 * room, 1e-6) * np.eye(2)
    W = max(relaxed_channel_uses(prob.node_totals(X), prob.region) * (1.0 + 1e-6), 1.0 + 1e-6)
    return SolverIterate(X=X, W=float(W), M=M, t=0)


def kkt_residual(prob: BitAllocationProblem, it: SolverIterate, duals: dict) -> float:
    """Scaled KKT residual of the relaxed problem at ``it`` using the subproblem multipliers.

    Stationarity of the Lagrangian W + l_tr (tr M - 1) + sum_S l_S (X_S - C_S W)
    - nu^T X - nu_W (W - 1) - <Z, G(x)>, plus complementarity and primal
    infeasibility, each relative to the size of the terms involved. l_tr, l_S
    and Z come from the barrier; the bound multipliers nu, nu_W are recovered
    as the nonnegative part of the remaining gradient, since barrier duals of
    active simple bounds are poorly resolved.
    """
    m = prob.m
    nS = prob.region.capacity.size
    lam = duals["scalar"]
    l_tr = lam[0]
    l_mac = lam[2:2 + nS]
    Z = duals["lmi"]
    gy = np.atleast_1d(prob.weight_grads(it.X))
    # d G / dX_i has eps y'_i a_i a_i^T in the lower-right block
    lmi_x = prob.eps * gy * np.einsum("ia,ab,ib->i", prob.a, Z[2:, 2:], prob.a)
    mac_x = prob.subset_incidence.T @ l_mac
    rest_x = mac_x - lmi_x
    nu = np.maximum(rest_x, 0.0)
    mac_w = float(l_mac @ prob.region.capacity)
    rest_w = 1.0 - mac_w
    nu_w = max(rest_w, 0.0)
    gx = rest_x - nu
    gw = rest_w - nu_w
    lmi_m = np.array([Z[0, 0], 2.0 * Z[0, 1], Z[1, 1]])
    gm = l_tr * np.array([1.0, 0.0, 1.0]) - lmi_m
    scale_x = 1.0 + (max(float(np.max(np.abs(mac_x))), float(np.max(np.abs(lmi_x)))) if m else 0.0)
    scale_w = 1.0 + max(1.0, mac_w)
    scale_m = 1.0 + max(l_tr, float(np.max(np.abs(lmi_m))))
    stat = max(float(np.max(np.abs(gx))) / scale_x if m else 0.0,
               abs(gw) / scale_w, float(np.max(np.abs(gm))) / scale_m)
    # complementarity / feasibility of the relaxed problem itself
    G = np.zeros((4, 4))
    G[:2, :2] = it.M
    G[:2, 2:] = G[2:, :2] = np.eye(2)
    G[2:, 2:] = prob.eps * prob.fim(it.X)
    mac = prob.subset_incidence @ it.X - prob.region.capacity * it.W
    comp = max(abs(l_tr * (np.trace(it.M) - 1.0)),
               float(np.max(np.abs(l_mac * mac))) / (1.0 + it.W),
               float(np.max(np.abs(nu * it.X))) / scale_x if m else 0.0,
               nu_w * (it.W - 1.0) / scale_w,
               abs(float(np.sum(Z * G))))
    infeas = max(0.0, float(np.trace(it.M)) - 1.0, float(np.max(mac)) / (1.0 + it.W),
                 -float(np.linalg.eigvalsh(G)[0]))
    return max(stat, comp, infeas)


def _round_up(prob: BitAllocationProblem, X) -> np.ndarray:
    Xi = np.ceil(np.asarray(X) - 1e-6).clip(min=0).astype(int)
    # guard against the relaxed point sitting a hair outside the budget
    while prob.crlb(Xi) > prob.eps:
        cand = [prob.crlb(Xi + np.eye(prob.m, dtype=int)[i]) for i in range(prob.m)]
        Xi[int(np.argmin(cand))] += 1
    return Xi


def mcsca_run(ctx: FimContext, region: MacRegion, eps: float,
              config: McscaConfig | None = None, eps_star: float | None = None) -> AllocationResult:
    """Relaxed bit allocation for the node set of ``region`` followed by ceil rounding.

    :param eps_star: reference minimum CRLB used for the feasibility check
        (default: that of the node set itself)
    """
    config = McscaConfig() if config is None else config
    prob = BitAllocationProblem(ctx, region, eps, config.model)
    ref = prob.eps_star if eps_star is None else max(eps_star, prob.eps_star)
    if not eps > ref * (1.0 + 1e-9):
        raise InfeasibleEpsilonError(eps, ref)
    it = initial_iterate(prob)
    trace = []
    converged = False
    result = None
    mu = config.mu
    for t in range(config.max_iter):
        it, moved = restore(prob, it)
        beta = config.beta(t)
        while True:
            result = inner_solve(prob, it, beta, mu, config.gap_tol)
            nxt = result.iterate
            # the tangent overstates y where it is concave; a stiffer proximal
            # term pulls the next point back inside the true budget
            if prob.crlb(nxt.X) <= prob.eps or mu >= config.mu_max:
                break
            mu = min(10.0 * mu, config.mu_max)
        step = float(np.linalg.norm(nxt.x - it.x))
        crlb_now = prob.crlb(nxt.X)
        trace.append({
            "iteration": t + 1,
            "beta": beta,
            "mu": mu,
            "objective": result.objective,
            "relaxed_w": nxt.W,
            "trace_m": prob.eps * float(np.trace(nxt.M)),
            "crlb": crlb_now,
            "step": step,
            "step_over_beta": step / beta,
            "newton_steps": result.newton_steps,
            "restored": int(moved),
        })
        done = step <= config.tol * (1.0 + float(np.linalg.norm(it.x)))
        it = nxt
        if done:
            converged = True
            break
    kkt = kkt_residual(prob, it, result.duals)
    Xi = _round_up(prob, it.X)
    bits = prob.expand(Xi, dtype=int)
    W = min_channel_uses(prob.node_totals(Xi), region)
    return AllocationResult(
        omega=tuple(region.nodes), bits=bits, W=W,
        relaxed_bits=prob.expand(it.X), relaxed_W=float(it.W),
        relaxed_crlb=prob.eps * float(np.trace(it.M)), crlb=prob.crlb(Xi), eps=float(eps),
        kkt_residual=kkt, iterations=len(trace), converged=converged, trace=tuple(trace),
    )


TRACE_COLUMNS = ("iteration", "beta", "mu", "objective", "relaxed_w", "trace_m", "crlb", "step",
                 "step_over_beta", "newton_steps", "restored")


def write_trace_csv(result: AllocationResult, target) -> None:
    """Per-iteration convergence record (objective, residual quantities, beta_t, step).

    :param target: file path or an open text stream
    """
    if hasattr(target, "write"):
        _write_trace(result, target)
        return
    with Path(target).open("w", newline="") as fh:
        _write_trace(result, fh)


def _write_trace(result: AllocationResult, fh) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(TRACE_COLUMNS)
    for row in result.trace:
        wr.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
