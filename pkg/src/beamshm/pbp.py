"""Bayesian MLP trained by probabilistic backpropagation (assumed density filtering).

Every weight carries an independent Gaussian posterior; the noise precision
gamma and the prior precision lambda carry Gamma posteriors. Each training
point is absorbed by one forward pass of Gaussian moments, evaluation of the
log marginal likelihood of the target, and a moment-matching update driven by
the gradients of that quantity with respect to the weight means and variances.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import InvalidMomentError, NumericError, ShapeError

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
VARIANCE_FLOOR = 1e-12
ALPHA_LIMIT = 40.0


@dataclass
class GaussianLayer:
    mean: np.ndarray  # (n_out, n_in + 1); last column is the bias
    variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.variance.shape:
            raise ShapeError(f"mean {self.mean.shape} and variance {self.variance.shape} differ")

    @property
    def n_in(self):
        return self.mean.shape[1] - 1

    @property
    def n_out(self):
        return self.mean.shape[0]


@dataclass
class ActivationMoments:
    mean: np.ndarray
    variance: np.ndarray


@dataclass
class PredictiveDistribution:
    mean: float
    variance: float


@dataclass
class PriorSites:
    """EP site terms of the weight prior, in natural parameters."""

    prec: list
    mprec: list
    a: list
    b: list


@dataclass
class PbpNetwork:
    layers: list
    noise_a: float = 6.0
    noise_b: float = 6.0
    prior_a: float = 6.0
    prior_b: float = 6.0
    sites: PriorSites | None = field(default=None, repr=False)
    n_rejected: int = 0

    @classmethod
    def create(cls, layer_sizes, seed=0, noise=(6.0, 6.0), prior=(6.0, 6.0)):
        """Means ~ N(0, 1/(fan_in + 1)); variances = 1/E[lambda]."""
        if len(layer_sizes) < 2:
            raise ShapeError("need at least an input and an output size")
        rng = np.random.default_rng(seed)
        pa, pb = prior
        v0 = pb / pa
        layers, sites = [], PriorSites([], [], [], [])
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            mean = rng.standard_normal((n_out, n_in + 1)) / math.sqrt(n_in + 1)
            layers.append(GaussianLayer(mean=mean, variance=np.full((n_out, n_in + 1), v0)))
            sites.prec.append(np.full((n_out, n_in + 1), 1.0 / v0))
            # the random initial means are carried by the prior sites, so the
            # first cavity holds data information only
            sites.mprec.append(mean / v0)
            sites.a.append(np.zeros((n_out, n_in + 1)))
            sites.b.append(np.zeros((n_out, n_in + 1)))
        return cls(layers=layers, noise_a=float(noise[0]), noise_b=float(noise[1]),
                   prior_a=float(pa), prior_b=float(pb), sites=sites)

    @property
    def layer_sizes(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def expected_noise_precision(self):
        return self.noise_a / self.noise_b

    def copy(self):
        s = self.sites
        return PbpNetwork(
            layers=[GaussianLayer(lay.mean.copy(), lay.variance.copy()) for lay in self.layers],
            noise_a=self.noise_a, noise_b=self.noise_b,
            prior_a=self.prior_a, prior_b=self.prior_b,
            sites=None if s is None else PriorSites(*([a.copy() for a in x]
                                                       for x in (s.prec, s.mprec, s.a, s.b))),
            n_rejected=self.n_rejected)


# ---------------------------------------------------------------------------
# moment propagation
# ---------------------------------------------------------------------------

def relu_moments(m, v):
    """Mean and variance of max(0, a) for a ~ N(m, v)."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise InvalidMomentError("pre-activation variance must be non-negative")
    out_m, out_v, _ = _relu_moments(m, v)
    return out_m, out_v


def _relu_moments(m, v):
    # written via the inverse Mills ratio phi/Phi, which stays finite for very
    # negative alpha where Phi itself underflows
    pos = v > 0
    s = np.sqrt(np.where(pos, v, 1.0))
    # beyond |alpha| = 40 both tails underflow: the output is a or 0 exactly
    alpha = np.clip(np.where(pos, m / s, 0.0), -ALPHA_LIMIT, ALPHA_LIMIT)
    cdf = ndtr(alpha)
    log_pdf = -0.5 * alpha**2 - 0.5 * LOG_2PI
    ratio = np.exp(log_pdf - log_ndtr(alpha))
    pdf = np.exp(log_pdf)
    mean = cdf * (m + s * ratio)
    var = (cdf * v * (1.0 - ratio * (ratio + alpha))
           + cdf * (1.0 - cdf) * (m + s * ratio) ** 2)
    dead = alpha <= -ALPHA_LIMIT
    mean = np.where(pos, np.where(dead, 0.0, mean), np.maximum(m, 0.0))
    var = np.where(pos & ~dead, np.maximum(var, 0.0), 0.0)
    pdf = np.where(dead, 0.0, pdf)
    cdf = np.where(dead, 0.0, cdf)
    return mean, var, (pos, s, cdf, pdf)


def _relu_moments_backward(m, mean_out, aux, g_mean, g_var):
    pos, s, cdf, pdf = aux
    # d mean'/dm = Phi, d mean'/dv = phi/(2s), d var'/dm = 2 mean' (1 - Phi),
    # d var'/dv = Phi - mean' phi / s
    gm = g_mean * cdf + g_var * 2.0 * mean_out * (1.0 - cdf)
    gv = g_mean * pdf / (2.0 * s) + g_var * (cdf - mean_out * pdf / s)
    step = (m > 0).astype(float)
    gm = np.where(pos, gm, g_mean * step)
    gv = np.where(pos, gv, 0.0)
    return gm, gv


def _linear_moments(layer, mz, vz):
    n1 = layer.mean.shape[1]
    mz1 = np.append(mz, 1.0)
    vz1 = np.append(vz, 0.0)
    ma = layer.mean @ mz1 / math.sqrt(n1)
    va = ((layer.mean**2) @ vz1 + layer.variance @ (mz1**2) + layer.variance @ vz1) / n1
    return ma, va, mz1, vz1


def _forward(net, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != net.layers[0].n_in:
        raise ShapeError(f"input has {x.shape[0]} features, network expects {net.layers[0].n_in}")
    mz, vz = x, np.zeros_like(x)
    cache, moments = [], []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        ma, va, mz1, vz1 = _linear_moments(layer, mz, vz)
        if i < last:
            mz, vz, aux = _relu_moments(ma, va)
        else:
            mz, vz, aux = ma, va, None
        cache.append((mz1, vz1, ma, va, mz, aux))
        moments.append(ActivationMoments(mean=mz, variance=vz))
    return moments, cache


def forward_moments(net: PbpNetwork, x) -> list:
    """Per-layer output moments; hidden layers are rectified, the last is linear."""
    return _forward(net, x)[0]


def _backward(net, cache, g_m, g_v):
    """Gradients of a scalar w.r.t. every layer's (mean, variance) matrices."""
    grads = [None] * len(net.layers)
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        layer = net.layers[i]
        mz1, vz1, ma, va, mz, aux = cache[i]
        if i < last:
            g_m, g_v = _relu_moments_backward(ma, mz, aux, g_m, g_v)
        n1 = layer.mean.shape[1]
        scale = math.sqrt(n1)
        gM = np.outer(g_m, mz1) / scale + 2.0 * layer.mean * np.outer(g_v, vz1) / n1
        gV = np.outer(g_v, mz1**2 + vz1) / n1
        grads[i] = (gM, gV)
        if i > 0:
            g_mz = layer.mean.T @ g_m / scale + 2.0 * mz1 * (layer.variance.T @ g_v) / n1
            g_vz = ((layer.mean**2).T @ g_v + layer.variance.T @ g_v) / n1
            g_m, g_v = g_mz[:-1], g_vz[:-1]
    return grads


# ---------------------------------------------------------------------------
# likelihood and updates
# ---------------------------------------------------------------------------

def log_marginal(y, m, v, gamma):
    """log N(y | m, v + 1/gamma)."""
    total = v + 1.0 / gamma
    if not total > 0:
        raise NumericError(f"non-positive predictive variance {total}")
    return -0.5 * LOG_2PI - 0.5 * math.log(total) - 0.5 * (y - m) ** 2 / total


def log_marginal_grad(y, m, v, gamma):
    """(d logZ/dm, d logZ/dv)."""
    total = v + 1.0 / gamma
    r = y - m
    return r / total, -0.5 / total + 0.5 * r**2 / total**2


def _noise_update(a, b, y, m, v):
    # moment matching of the Gamma posterior on gamma, using Z evaluated at
    # shape a, a + 1, a + 2 (noise variances b/(a-1), b/a, b/(a+1))
    def lz(var):
        total = v + var
        return -0.5 * math.log(total) - 0.5 * (y - m) ** 2 / total

    lz0, lz1, lz2 = lz(b / (a - 1.0)), lz(b / a), lz(b / (a + 1.0))
    a_new = 1.0 / (math.exp(lz2 - 2.0 * lz1 + lz0) * (a + 1.0) / a - 1.0)
    b_new = 1.0 / (math.exp(lz2 - lz1) * (a + 1.0) / b - math.exp(lz1 - lz0) * a / b)
    return a_new, b_new


def pbp_update(net: PbpNetwork, x, y: float) -> PbpNetwork:
    """Absorb one (x, y) pair in place and return ``net``.

    The likelihood uses the posterior mean of the noise variance,
    b/(a - 1), which is what the Gamma moment-matching step is built around.
    """
    _update(net, x, y)
    return net


def logz_gradients(net: PbpNetwork, x, y: float):
    """logZ at (x, y) and its gradients w.r.t. every layer's (mean, variance).

    Returns (logZ, [(dM_i, dV_i), ...], (m, v)) with (m, v) the output moments.
    """
    moments, cache = _forward(net, x)
    m = float(moments[-1].mean[0])
    v = float(moments[-1].variance[0])
    gamma = (net.noise_a - 1.0) / net.noise_b
    logz = log_marginal(y, m, v, gamma)
    g_m, g_v = log_marginal_grad(y, m, v, gamma)
    return logz, _backward(net, cache, np.array([g_m]), np.array([g_v])), (m, v)


def _update(net, x, y):
    logz, grads, (m, v) = logz_gradients(net, x, y)

    new = []
    for layer, (gM, gV) in zip(net.layers, grads):
        if not (np.all(np.isfinite(gM)) and np.all(np.isfinite(gV))):
            net.n_rejected += 1
            log.warning("non-finite logZ gradient; sample skipped")
            return logz
        mean = layer.mean + layer.variance * gM
        var = layer.variance - layer.variance**2 * (gM**2 - 2.0 * gV)
        new.append((mean, np.maximum(var, VARIANCE_FLOOR)))
    try:
        a_new, b_new = _noise_update(net.noise_a, net.noise_b, y, m, v)
    except (OverflowError, ZeroDivisionError):
        a_new = b_new = float("nan")
    for layer, (mean, var) in zip(net.layers, new):
        layer.mean, layer.variance = mean, var
    if math.isfinite(a_new) and math.isfinite(b_new) and a_new > 1.0 and b_new > 0.0:
        net.noise_a, net.noise_b = a_new, b_new
    return logz


def refine_prior(net: PbpNetwork, max_cavity_ratio: float = 1e6) -> PbpNetwork:
    """One sequential EP sweep over the Gaussian prior factors of every weight.

    For each weight the factor N(w | 0, 1/lambda) is divided out of the
    posterior, the product of the cavity with the exact factor is moment
    matched jointly over (w, lambda), and the site is replaced. The Gamma
    posterior on lambda is threaded through the sweep, so each weight sees the
    lambda posterior left by the previous one.
    """
    s = net.sites
    if s is None:
        return net
    a_nat, b_nat = net.prior_a - 1.0, -net.prior_b
    log, exp = math.log, math.exp
    min_cav_prec = 1.0 / (max_cavity_ratio * net.prior_b / (net.prior_a - 1.0))
    for i, layer in enumerate(net.layers):
        shape = layer.mean.shape
        m_w, v_w = layer.mean.ravel().tolist(), layer.variance.ravel().tolist()
        sp, sm = s.prec[i].ravel().tolist(), s.mprec[i].ravel().tolist()
        sa, sb = s.a[i].ravel().tolist(), s.b[i].ravel().tolist()
        for k in range(len(m_w)):
            cav_prec = 1.0 / v_w[k] - sp[k]
            cav_mprec = m_w[k] / v_w[k] - sm[k]
            a_cav_nat = a_nat - sa[k]
            b_cav_nat = b_nat - sb[k]
            a_cav = a_cav_nat + 1.0
            b_cav = -b_cav_nat
            if not (cav_prec > min_cav_prec and b_cav > 0.0 and a_cav > 1.0):
                continue
            v_cav = 1.0 / cav_prec
            m_cav = cav_mprec * v_cav
            vv = v_cav + b_cav / (a_cav - 1.0)
            v1 = v_cav + b_cav / a_cav
            v2 = v_cav + b_cav / (a_cav + 1.0)
            m2 = m_cav * m_cav
            lz = -0.5 * log(vv) - 0.5 * m2 / vv
            lz1 = -0.5 * log(v1) - 0.5 * m2 / v1
            lz2 = -0.5 * log(v2) - 0.5 * m2 / v2
            dm = -m_cav / vv
            dv = -0.5 / vv + 0.5 * m2 / (vv * vv)
            m_new = m_cav + v_cav * dm
            v_new = v_cav - v_cav * v_cav * (dm * dm - 2.0 * dv)
            try:
                a_new = 1.0 / (exp(lz2 - 2.0 * lz1 + lz) * (a_cav + 1.0) / a_cav - 1.0)
                b_new = 1.0 / (exp(lz2 - lz1) * (a_cav + 1.0) / b_cav
                               - exp(lz1 - lz) * a_cav / b_cav)
            except (OverflowError, ZeroDivisionError):
                continue
            if not (v_new > VARIANCE_FLOOR and a_new > 1.0 and b_new > 0.0):
                continue
            sp[k] = 1.0 / v_new - cav_prec
            sm[k] = m_new / v_new - cav_mprec
            sa[k] = (a_new - 1.0) - a_cav_nat
            sb[k] = -b_new - b_cav_nat
            m_w[k], v_w[k] = m_new, v_new
            a_nat, b_nat = a_new - 1.0, -b_new
        layer.mean = np.array(m_w).reshape(shape)
        layer.variance = np.array(v_w).reshape(shape)
        s.prec[i] = np.array(sp).reshape(shape)
        s.mprec[i] = np.array(sm).reshape(shape)
        s.a[i] = np.array(sa).reshape(shape)
        s.b[i] = np.array(sb).reshape(shape)
    net.prior_a, net.prior_b = a_nat + 1.0, -b_nat
    return net


def predict(net: PbpNetwork, x) -> PredictiveDistribution:
    """Gaussian approximation of the predictive density at x."""
    out = forward_moments(net, x)[-1]
    return PredictiveDistribution(mean=float(out.mean[0]),
                                  variance=float(out.variance[0]) + 1.0 / net.expected_noise_precision)


def fit(net: PbpNetwork, X, y, epochs: int = 10, seed: int = 0, refine: bool = True,
        max_cavity_ratio: float = 1e6):
    """Run ``epochs`` shuffled ADF passes; returns (net, per-epoch mean logZ)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeError("X and y disagree on the number of samples")
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(int(epochs)):
        total = 0.0
        for i in rng.permutation(X.shape[0]):
            total += _update(net, X[i], y[i])
        if refine:
            refine_prior(net, max_cavity_ratio)
        trace.append(total / max(X.shape[0], 1))
    return net, trace
