"""Position FIM/CRLB, maximum-likelihood fusion at the FC, and the baseline fusers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .estimation import LocalEstimate
from .exceptions import UnlocalizableError
from .klt import KltCodec, SampleWindow, quantization_noise_variance, stack_real, window_samples
from .scene import SPEED_OF_LIGHT, Scene, Waveform, pulse_derivative, pulse_value

SEARCH_MARGIN = 20.0


@dataclass(frozen=True)
class ReceiverModel:
    """What the FC knows about one receiver when evaluating the FIM."""

    receiver_id: int
    jacobian: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray
    noise_var: float

    @property
    def projected(self) -> np.ndarray:
        """Jacobian expressed in the KLT basis, (ds/dtheta) U."""
        return self.jacobian @ self.basis

    @property
    def size(self) -> int:
        return self.eigvals.size


@dataclass(frozen=True)
class FimContext:
    receivers: tuple[ReceiverModel, ...]
    theta: np.ndarray

    def index_of(self, receiver_id: int) -> int:
        for i, r in enumerate(self.receivers):
            if r.receiver_id == receiver_id:
                return i
        raise KeyError(receiver_id)


@dataclass(frozen=True)
class PositionEstimate:
    theta: np.ndarray
    objective: float
    iterations: int


@dataclass(frozen=True)
class SignalObservation:
    """Reconstructed stacked window of one receiver and its noise covariance."""

    receiver_id: int
    window: SampleWindow
    alpha_hat: complex
    samples: np.ndarray
    covariance: np.ndarray


# -- geometry ----------------------------------------------------------------

def delay_gradient(theta, tx, rx) -> np.ndarray:
    """d tau / d theta for the bistatic path tx -> theta -> rx."""
    theta = np.asarray(theta, dtype=float)
    d1 = theta - tx
    d2 = theta - rx
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 < 1e-9 or n2 < 1e-9:
        raise ValueError("target coincides with a node; delay gradient undefined")
    return (d1 / n1 + d2 / n2) / SPEED_OF_LIGHT


def _delays(points: np.ndarray, tx, rx) -> np.ndarray:
    return (np.linalg.norm(points - tx, axis=-1) + np.linalg.norm(points - rx, axis=-1)) / SPEED_OF_LIGHT


def model_signal(points, scene: Scene, n: int, alpha_hat: complex, window: SampleWindow,
                 w: Waveform) -> np.ndarray:
    """Stacked noiseless window s_n(theta) for an array of candidate positions (G x 2K_n)."""
    pts = np.atleast_2d(points)
    tau = _delays(pts, scene.tx_pos, scene.rx_pos[n])
    s = pulse_value(window.times(w)[None, :] - tau[:, None], w) * np.sqrt(scene.tx_energy)
    return np.concatenate([alpha_hat.real * s, alpha_hat.imag * s], axis=1)


def signal_jacobian(theta, scene: Scene, n: int, alpha_hat: complex, window: SampleWindow,
                    w: Waveform, tau: float | None = None) -> np.ndarray:
    """2 x 2K_n Jacobian of s_n(theta): (ds/dtau)(dtau/dtheta) with ds/dtau = -sqrt(E) alpha s'.

    :param tau: delay at which the pulse slope is taken (default tau_n(theta))
    """
    g = delay_gradient(theta, scene.tx_pos, scene.rx_pos[n])
    if tau is None:
        tau = _delays(np.asarray(theta, dtype=float), scene.tx_pos, scene.rx_pos[n])
    ds = -np.sqrt(scene.tx_energy) * pulse_derivative(window.times(w) - tau, w)
    dsdtau = np.concatenate([alpha_hat.real * ds, alpha_hat.imag * ds])
    return np.outer(g, dsdtau)


def build_fim_context(theta, scene: Scene, estimates: Sequence[LocalEstimate],
                      codecs: Sequence[KltCodec], w: Waveform, at_estimates: bool = True) -> FimContext:
    """Per-receiver Jacobians and KLT data for the FIM at theta.

    :param at_estimates: take the pulse slope at each receiver's tau_hat (the
        point its window statistics are linearised around) rather than at
        tau_n(theta); the delay gradient is always taken at theta
    """
    receivers = []
    for est, codec in zip(estimates, codecs):
        n = est.receiver_id
        tau = est.tau_hat if at_estimates else None
        jac = signal_jacobian(theta, scene, n, est.alpha_hat, codec.window, w, tau)
        receivers.append(ReceiverModel(receiver_id=n, jacobian=jac, basis=codec.basis,
                                       eigvals=codec.eigvals, noise_var=float(scene.noise_var[n])))
    return FimContext(receivers=tuple(receivers), theta=np.asarray(theta, dtype=float))


# -- information weights -----------------------------------------------------

def info_weight(gamma, noise_var, bits, model: str = "standard"):
    """Per-component precision 1 / (sigma^2/2 + eta(X)).

    With the standard noise model this is 2^{2X-1} / (gamma + 2^{2X-2} sigma^2).
    """
    gamma = np.asarray(gamma, dtype=float)
    bits = np.asarray(bits, dtype=float)
    if model == "standard":
        z = np.exp2(2.0 * bits - 2.0)
        out = 2.0 * z / (gamma + z * noise_var)
    else:
        eta = quantization_noise_variance(gamma, bits, model)
        out = 1.0 / (0.5 * noise_var + eta)
    return float(out) if np.ndim(out) == 0 else out


def info_weight_grad(gamma, noise_var, bits, model: str = "standard"):
    """d/dX of info_weight; for the standard model ln2 4^X gamma / (gamma + 4^{X-1} sigma^2)^2."""
    gamma = np.asarray(gamma, dtype=float)
    bits = np.asarray(bits, dtype=float)
    ln2 = np.log(2.0)
    if model == "standard":
        z = np.exp2(2.0 * bits - 2.0)
        out = 4.0 * ln2 * z * gamma / (gamma + z * noise_var) ** 2
    elif model == "exact":
        # eta = gamma / (4^X - 1), d eta/dX = -2 ln2 4^X gamma / (4^X - 1)^2
        q = np.expm1(2.0 * ln2 * bits)
        with np.errstate(divide="ignore", invalid="ignore"):
            eta = gamma / q
            deta = -2.0 * ln2 * (q + 1.0) * gamma / q ** 2
            # y ~ 2 ln2 X / gamma near zero bits
            out = np.where(bits > 0, -deta / (0.5 * noise_var + eta) ** 2, 2.0 * ln2 / gamma)
    else:
        raise ValueError(f"unknown quantisation noise model {model!r}")
    return float(out) if np.ndim(out) == 0 else out


# -- FIM ---------------------------------------------------------------------

def _omega_indices(ctx: FimContext, omega) -> list[int]:
    if omega is None:
        return list(range(len(ctx.receivers)))
    return [ctx.index_of(n) for n in omega]


def fim(ctx: FimContext, bits, omega=None, model: str = "standard") -> np.ndarray:
    """J = sum_n (ds_n/dtheta U_n) diag(y_n(X_n)) (ds_n/dtheta U_n)^T.

    :param bits: per-receiver bit arrays aligned with ctx.receivers
    :param omega: receiver ids to include (default all)
    """
    J = np.zeros((2, 2))
    for i in _omega_indices(ctx, omega):
        r = ctx.receivers[i]
        A = r.projected
        y = info_weight(r.eigvals, r.noise_var, bits[i], model)
        J += (A * y) @ A.T
    return 0.5 * (J + J.T)


def fim_direct(ctx: FimContext, bits, omega=None, model: str = "standard") -> np.ndarray:
    """J = sum_n ds_n/dtheta (Q_w + Q_n)^{-1} ds_n/dtheta^T with Q_n = U diag(eta) U^T."""
    J = np.zeros((2, 2))
    for i in _omega_indices(ctx, omega):
        r = ctx.receivers[i]
        eta = quantization_noise_variance(r.eigvals, bits[i], model)
        C = 0.5 * r.noise_var * np.eye(r.size) + (r.basis * eta) @ r.basis.T
        J += r.jacobian @ np.linalg.solve(C, r.jacobian.T)
    return 0.5 * (J + J.T)


def fim_limit(ctx: FimContext, omega=None) -> np.ndarray:
    """FIM with unlimited quantisation bits, (2/sigma^2) sum ds/dtheta ds/dtheta^T."""
    J = np.zeros((2, 2))
    for i in _omega_indices(ctx, omega):
        r = ctx.receivers[i]
        J += 2.0 / r.noise_var * r.jacobian @ r.jacobian.T
    return J


def crlb_theta(J: np.ndarray) -> float:
    """tr(J^{-1}); raises UnlocalizableError when J is singular."""
    J = np.asarray(J, dtype=float)
    tr = float(np.trace(J))
    lam = np.linalg.eigvalsh(0.5 * (J + J.T))
    if not tr > 0 or lam[0] <= 1e-12 * tr:
        raise UnlocalizableError("singular Fisher information: target is unlocalizable")
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return tr / det


def epsilon_star(ctx: FimContext, omega=None) -> float:
    return crlb_theta(fim_limit(ctx, omega))


# -- search helpers ----------------------------------------------------------

def search_region(region, margin: float = SEARCH_MARGIN):
    x0, x1, y0, y1 = region
    return (x0 - margin, x1 + margin, y0 - margin, y1 + margin)


def local_region(theta0, region, w: Waveform):
    """Box of half-width c T_d around theta0, clipped to region.

    The uploaded windows are centred on the local delay estimates, so the echo
    model only explains them near the preliminary fix; far from it every window
    is empty and the likelihood flattens out.
    """
    r = SPEED_OF_LIGHT * w.window_length
    x0, x1, y0, y1 = region
    tx, ty = float(theta0[0]), float(theta0[1])
    box = (max(x0, tx - r), min(x1, tx + r), max(y0, ty - r), min(y1, ty + r))
    if not (box[1] >= box[0] and box[3] >= box[2]):
        raise ValueError("preliminary position lies outside the search region")
    return box


def _grid(region, cell: float) -> np.ndarray:
    x0, x1, y0, y1 = region
    if not (x1 >= x0 and y1 >= y0):
        raise ValueError("empty search region")
    nx = int(np.floor((x1 - x0) / cell + 1e-9)) + 1
    ny = int(np.floor((y1 - y0) / cell + 1e-9)) + 1
    gx, gy = np.meshgrid(x0 + cell * np.arange(nx), y0 + cell * np.arange(ny), indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _grid_then_refine(objective, gradient, region, cell: float, gtol: float = 1e-8) -> PositionEstimate:
    """Maximise objective over a coarse grid, then L-BFGS-B inside the region."""
    pts = _grid(region, cell)
    vals = objective(pts)
    i = int(np.argmax(vals))
    best, best_val = pts[i], float(vals[i])

    def fun(th):
        v = float(objective(th[None, :])[0])
        return -v, -gradient(th)

    x0, x1, y0, y1 = region
    res = minimize(fun, best, jac=True, method="L-BFGS-B", bounds=[(x0, x1), (y0, y1)],
                   options={"gtol": gtol, "ftol": 1e-15, "maxiter": 500})
    if np.all(np.isfinite(res.x)) and -res.fun >= best_val:
        return PositionEstimate(theta=np.asarray(res.x, dtype=float), objective=float(-res.fun),
                                iterations=int(res.nit))
    return PositionEstimate(theta=best.copy(), objective=best_val, iterations=int(res.nit))


def default_cell(region, max_points: int = 40_000) -> float:
    x0, x1, y0, y1 = region
    return float(min(5.0, max(1.0, np.sqrt((x1 - x0) * (y1 - y0) / max_points))))


# -- FC maximum likelihood ---------------------------------------------------

def _precisions(observations):
    return [np.linalg.inv(0.5 * (o.covariance + o.covariance.T)) for o in observations]


def fc_log_likelihood(points, observations: Sequence[SignalObservation], scene: Scene,
                      w: Waveform, precisions=None) -> np.ndarray:
    """-1/2 sum_n (r_n - s_n(theta))^T (Q_w + Q_n)^{-1} (r_n - s_n(theta)) per candidate."""
    precisions = _precisions(observations) if precisions is None else precisions
    pts = np.atleast_2d(points)
    total = np.zeros(pts.shape[0])
    for obs, P in zip(observations, precisions):
        e = obs.samples[None, :] - model_signal(pts, scene, obs.receiver_id, obs.alpha_hat, obs.window, w)
        total -= 0.5 * np.einsum("gi,ij,gj->g", e, P, e)
    return total


def fc_log_likelihood_grad(theta, observations, scene: Scene, w: Waveform, precisions=None) -> np.ndarray:
    precisions = _precisions(observations) if precisions is None else precisions
    g = np.zeros(2)
    for obs, P in zip(observations, precisions):
        n = obs.receiver_id
        e = obs.samples - model_signal(theta, scene, n, obs.alpha_hat, obs.window, w)[0]
        jac = signal_jacobian(theta, scene, n, obs.alpha_hat, obs.window, w)
        g += jac @ (P @ e)
    return g


def fc_ml_localize(observations: Sequence[SignalObservation], scene: Scene, w: Waveform,
                   region, cell: float | None = None) -> PositionEstimate:
    """ML position from reconstructed sample windows over a search region (x0, x1, y0, y1)."""
    if len(observations) == 0:
        raise ValueError("need at least one receiver")
    precisions = _precisions(observations)
    cell = default_cell(region) if cell is None else cell
    return _grid_then_refine(
        lambda p: fc_log_likelihood(p, observations, scene, w, precisions),
        lambda th: fc_log_likelihood_grad(th, observations, scene, w, precisions),
        region, cell)


def observation_from_window(record_samples, codec: KltCodec, est: LocalEstimate, noise_var: float,
                            extra_cov=None, samples=None) -> SignalObservation:
    r = stack_real(window_samples(record_samples, codec.window)) if samples is None else samples
    C = 0.5 * noise_var * np.eye(r.size)
    if extra_cov is not None:
        C = C + extra_cov
    return SignalObservation(receiver_id=est.receiver_id, window=codec.window,
                             alpha_hat=est.alpha_hat, samples=r, covariance=C)


# -- baselines ---------------------------------------------------------------

def _toa_terms(estimates, scene):
    if len(estimates) < 2:
        raise ValueError("delay-only localisation needs at least two receivers")
    ids = [e.receiver_id for e in estimates]
    tau = np.array([e.tau_hat for e in estimates])
    wts = np.array([1.0 / e.crlb_tau for e in estimates])
    return ids, tau, wts


def _toa_objective(pts, ids, tau, wts, scene):
    out = np.zeros(pts.shape[0])
    for n, t, wt in zip(ids, tau, wts):
        out -= wt * (t - _delays(pts, scene.tx_pos, scene.rx_pos[n])) ** 2
    return out


def _toa_gradient(th, ids, tau, wts, scene):
    g = np.zeros(2)
    for n, t, wt in zip(ids, tau, wts):
        r = t - _delays(th, scene.tx_pos, scene.rx_pos[n])
        g += 2.0 * wt * r * delay_gradient(th, scene.tx_pos, scene.rx_pos[n])
    return g


def baseline_toa_idcs(estimates: Sequence[LocalEstimate], scene: Scene, region,
                      cell: float | None = None) -> PositionEstimate:
    """Weighted least squares on the uploaded delays, weights 1/CRLB_tau."""
    ids, tau, wts = _toa_terms(estimates, scene)
    cell = default_cell(region) if cell is None else cell
    return _grid_then_refine(lambda p: _toa_objective(p, ids, tau, wts, scene),
                             lambda th: _toa_gradient(th, ids, tau, wts, scene), region, cell)


def preliminary_position(estimates: Sequence[LocalEstimate], scene: Scene, region,
                         outlier_prob: float = 0.1, cell: float | None = None) -> PositionEstimate:
    """Delay-only fix that tolerates gross delay errors.

    Each tau_hat is modelled as N(tau(theta), CRLB_tau) with probability
    1 - outlier_prob and uniform over the region's delay span otherwise. Used as
    the point at which the FC evaluates the FIM before any samples arrive.
    """
    ids, tau, wts = _toa_terms(estimates, scene)
    if not 0.0 < outlier_prob < 1.0:
        raise ValueError("outlier_prob must lie in (0, 1)")
    spans = []
    for n in ids:
        x0, x1, y0, y1 = region
        corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
        d = _delays(corners, scene.tx_pos, scene.rx_pos[n])
        spans.append(max(float(d.max() - d.min()), 1e-9))
    # log of the uniform-floor relative to the Gaussian peak, per receiver
    floors = np.array([np.log(outlier_prob / span) - np.log((1.0 - outlier_prob) * np.sqrt(wt / (2.0 * np.pi)))
                       for span, wt in zip(spans, wts)])

    def objective(pts):
        out = np.zeros(pts.shape[0])
        for n, t, wt, fl in zip(ids, tau, wts, floors):
            q = -0.5 * wt * (t - _delays(pts, scene.tx_pos, scene.rx_pos[n])) ** 2
            out += np.logaddexp(q, fl)
        return out

    def gradient(th):
        g = np.zeros(2)
        for n, t, wt, fl in zip(ids, tau, wts, floors):
            r = t - _delays(th, scene.tx_pos, scene.rx_pos[n])[()]
            q = -0.5 * wt * r ** 2
            resp = np.exp(q - np.logaddexp(q, fl))
            g += resp * wt * r * delay_gradient(th, scene.tx_pos, scene.rx_pos[n])
        return g

    cell = default_cell(region) if cell is None else cell
    return _grid_then_refine(objective, gradient, region, cell)


def model_power(points, scene: Scene, n: int, carrier: float) -> np.ndarray:
    """|alpha_n(theta)|^2 under the two-hop LOS pathloss and known reflection amplitude."""
    pts = np.atleast_2d(points)
    d1 = np.linalg.norm(pts - scene.tx_pos, axis=1) / 1e3
    d2 = np.linalg.norm(pts - scene.rx_pos[n], axis=1) / 1e3
    f = carrier / 1e9
    loss = 64.8 + 20.0 * np.log10(d1) + 20.0 * np.log10(d2) + 40.0 * np.log10(f)
    return scene.reflect_amp ** 2 * 10.0 ** (-loss / 10.0)


def _model_power_grad(th, scene, n, carrier):
    p = model_power(th, scene, n, carrier)[0]
    d1 = th - scene.tx_pos
    d2 = th - scene.rx_pos[n]
    return p * (-2.0 * d1 / (d1 @ d1) - 2.0 * d2 / (d2 @ d2))


def baseline_toa_rss_idcs(estimates: Sequence[LocalEstimate], scene: Scene, w: Waveform, region,
                          cell: float | None = None) -> PositionEstimate:
    """Delay cost plus a power term (|alpha_hat|^2 - |alpha(theta)|^2)^2 / var.

    var is the delta-method variance 4 |alpha_hat|^2 (CRLB_alpha / 2).
    """
    ids, tau, wts = _toa_terms(estimates, scene)
    pw = np.array([abs(e.alpha_hat) ** 2 for e in estimates])
    var = np.array([4.0 * abs(e.alpha_hat) ** 2 * 0.5 * e.crlb_alpha for e in estimates])
    fc = w.carrier

    def objective(pts):
        out = _toa_objective(pts, ids, tau, wts, scene)
        for n, p, v in zip(ids, pw, var):
            out -= (p - model_power(pts, scene, n, fc)) ** 2 / v
        return out

    def gradient(th):
        g = _toa_gradient(th, ids, tau, wts, scene)
        for n, p, v in zip(ids, pw, var):
            r = p - model_power(th, scene, n, fc)[0]
            g += 2.0 * r / v * _model_power_grad(th, scene, n, fc)
        return g

    cell = default_cell(region) if cell is None else cell
    return _grid_then_refine(objective, gradient, region, cell)


def uniform_quantize(x, bits: int, span: float):
    """Mid-rise uniform quantiser over [-span, span]; returns values and step."""
    levels = 2 ** bits
    step = 2.0 * span / levels
    idx = np.clip(np.floor(np.asarray(x) / step), -levels // 2, levels // 2 - 1)
    return (idx + 0.5) * step, step


def sdcs_observations(records, estimates, codecs, mode: str, scene: Scene, bits: int = 8):
    """Signal-domain uploads: raw windows (``ideal``) or uniformly quantised windows (``uniform8``)."""
    out = []
    for rec, est, codec in zip(records, estimates, codecs):
        sigma2 = float(scene.noise_var[est.receiver_id])
        r = stack_real(window_samples(rec.samples, codec.window))
        if mode == "ideal":
            out.append(observation_from_window(rec.samples, codec, est, sigma2, samples=r))
        elif mode == "uniform8":
            span = 4.0 * np.sqrt(np.max(codec.eigvals))
            rq, step = uniform_quantize(r, bits, span)
            extra = step ** 2 / 12.0 * np.eye(r.size)
            out.append(observation_from_window(rec.samples, codec, est, sigma2, extra, samples=rq))
        else:
            raise ValueError(f"unknown SDCS mode {mode!r}")
    return out


def baseline_sdcs(records, estimates, codecs, mode: str, scene: Scene, w: Waveform, region,
                  cell: float | None = None) -> PositionEstimate:
    obs = sdcs_observations(records, estimates, codecs, mode, scene)
    return fc_ml_localize(obs, scene, w, region, cell)
