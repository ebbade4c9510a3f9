"""
Counting statistics of a heralded storage experiment.

All uncertainties are one standard deviation from first-order propagation
of independent Poisson counts, plus relative systematic errors where noted.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FitError, NegativeSignalError


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float

    def __iter__(self):
        yield self.value
        yield self.sigma

    def __format__(self, spec):
        spec = spec or ".6g"
        return f"{self.value:{spec}} +/- {self.sigma:{spec}}"


INFINITE_SNR = Estimate(math.inf, 0.0)


@dataclass(frozen=True)
class CountsRecord:
    n_herald: int
    n_ret: int
    n_noise_tot: int
    n_noise_mem: int = 0
    eta_h: float = 1.0
    eta_det: float = 1.0
    g2_input: float = 0.0
    g2_input_sigma: float = 0.0

    def __post_init__(self):
        for name in ("n_herald", "n_ret", "n_noise_tot", "n_noise_mem"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be a non-negative count, got {v}")
        for name in ("eta_h", "eta_det"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name} must lie in (0, 1], got {v}")
        if self.g2_input < 0 or self.g2_input_sigma < 0:
            raise DomainError("g2_input and its uncertainty must be >= 0")
        for name in ("n_noise_tot", "n_noise_mem"):
            if getattr(self, name) > self.n_herald:
                raise DomainError(f"{name} exceeds n_herald")


def e2e_efficiency(r, rel_sigma_eta_h=0.10, rel_sigma_eta_det=0.10):
    """(N_ret - N_noise) / (N_herald eta_h eta_det)."""
    if r.n_herald <= 0:
        raise DomainError("n_herald must be positive")
    signal = r.n_ret - r.n_noise_tot
    if signal < 0:
        raise NegativeSignalError(
            f"retrieved counts {r.n_ret} below noise counts {r.n_noise_tot}")
    denom = r.n_herald * r.eta_h * r.eta_det
    eta = signal / denom
    var = (r.n_ret + r.n_noise_tot) / denom ** 2
    var += eta ** 2 * (1.0 / r.n_herald + rel_sigma_eta_h ** 2 + rel_sigma_eta_det ** 2)
    return Estimate(eta, math.sqrt(var))


def noise_floor(n_noise, n_herald):
    """Noise counts per storage attempt."""
    if n_herald <= 0:
        raise DomainError("n_herald must be positive")
    if n_noise < 0:
        raise DomainError("n_noise must be >= 0")
    mu = n_noise / n_herald
    return Estimate(mu, math.sqrt(n_noise) / n_herald)


def snr(r):
    """(N_ret - N_noise) / N_noise; :data:`INFINITE_SNR` without noise counts."""
    n, s = r.n_noise_tot, r.n_ret
    if n == 0:
        return INFINITE_SNR
    value = (s - n) / n
    var = s / n ** 2 + s ** 2 / n ** 3
    return Estimate(value, math.sqrt(var))


def g2_retrieved_model(r, g2_noise=2.0):
    """Autocorrelation of retrieved light as an incoherent mix of the input
    photon (weight N_ret - N_noise) and noise of autocorrelation ``g2_noise``."""
    if r.n_ret <= 0:
        raise DomainError("n_ret must be positive")
    if g2_noise < 0:
        raise DomainError("g2_noise must be >= 0")
    nr, nn = float(r.n_ret), float(r.n_noise_tot)
    s = nr - nn
    if s < 0:
        raise NegativeSignalError(
            f"retrieved counts {r.n_ret} below noise counts {r.n_noise_tot}")
    gi = r.g2_input
    num = s * s * gi + 2 * nn * s + nn * nn * g2_noise
    value = num / nr ** 2
    d_nr = (2 * s * gi + 2 * nn) / nr ** 2 - 2 * num / nr ** 3
    d_nn = (-2 * s * gi + 2 * s - 2 * nn + 2 * nn * g2_noise) / nr ** 2
    d_gi = s * s / nr ** 2
    var = d_nr ** 2 * nr + d_nn ** 2 * nn + (d_gi * r.g2_input_sigma) ** 2
    return Estimate(value, math.sqrt(var))


def g2_snr_limit(snr_value):
    """2 / (SNR + 1): thermal noise on a perfect single photon."""
    if snr_value < 0:
        raise DomainError("snr must be >= 0")
    if math.isinf(snr_value):
        return 0.0
    return 2.0 / (snr_value + 1.0)


def time_bandwidth_product(tau_ns, bandwidth_mhz, eta=None):
    """B = tau * bandwidth (ns * MHz * 1e-3), and eta * B (None without eta)."""
    if tau_ns <= 0 or bandwidth_mhz <= 0:
        raise DomainError("tau and bandwidth must be positive")
    b = tau_ns * bandwidth_mhz * 1e-3
    return b, (None if eta is None else eta * b)


@dataclass(frozen=True)
class LifetimeFit:
    eta0: Estimate
    tau: Estimate
    rate: Estimate
    covariance: np.ndarray  # of (eta0, rate)
    chi2: float
    dof: int
    n_used: int
    no_decay: bool = False


def _seed(t, y, s):
    """Weighted straight-line fit of log(y) against t."""
    w = (y / s) ** 2
    a = np.vstack([np.ones_like(t), -t]).T
    coef, *_ = np.linalg.lstsq(a * np.sqrt(w)[:, None], np.log(y) * np.sqrt(w), rcond=None)
    return math.exp(coef[0]), coef[1]


def fit_lifetime(points, max_iter=100, rtol=1e-12):
    """Weighted least-squares fit of eta(t) = eta0 exp(-t / tau).

    ``points`` is a sequence of (storage_time_ns, eta, sigma).  The fit runs
    on linear residuals, parametrised by the decay rate k = 1/tau; the
    log-linear fit of the positive points seeds Gauss-Newton.  Errors come
    from the covariance (J^T W J)^-1 with absolute sigmas.  A rate that is
    not positive yields ``no_decay`` with infinite tau.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise FitError("points must be (time, eta, sigma) triples")
    t, y, s = arr.T
    if np.any(~np.isfinite(arr)):
        raise FitError("points must be finite")
    if np.any(s <= 0):
        raise DomainError("uncertainties must be positive")
    keep = y > 0
    if not keep.all():
        warnings.warn(f"excluding {int((~keep).sum())} non-positive efficiency points",
                      RuntimeWarning, stacklevel=2)
    t, y, s = t[keep], y[keep], s[keep]
    if t.size < 3:
        raise FitError("at least three positive points are needed")
    if np.unique(t).size < 2:
        raise FitError("storage times must not all coincide")

    w = 1.0 / s ** 2
    a, k = _seed(t, y, s)

    def chi2(a, k):
        return float(np.sum(w * (y - a * np.exp(-k * t)) ** 2))

    c_old = chi2(a, k)
    for _ in range(max_iter):
        e = np.exp(-k * t)
        r = y - a * e
        jac = np.vstack([e, -a * t * e]).T
        jw = jac * w[:, None]
        try:
            delta = np.linalg.solve(jac.T @ jw, jw.T @ r)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular normal equations") from exc
        lam = 1.0
        while lam > 1e-10:
            a_new, k_new = a + lam * delta[0], k + lam * delta[1]
            c_new = chi2(a_new, k_new)
            if c_new <= c_old:
                break
            lam *= 0.5
        else:
            break
        converged = abs(c_old - c_new) <= rtol * max(c_old, 1e-300)
        a, k, c_old = a_new, k_new, c_new
        if converged:
            break

    a, k = float(a), float(k)
    e = np.exp(-k * t)
    jac = np.vstack([e, -a * t * e]).T
    cov = np.linalg.inv(jac.T @ (jac * w[:, None]))
    sa, sk = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    dof = t.size - 2
    span = float(t.max() - t.min())
    no_decay = not k > 1e-12 / span
    if no_decay:
        tau = Estimate(math.inf, math.inf)
    else:
        tau = Estimate(1.0 / k, sk / k ** 2)
    return LifetimeFit(Estimate(a, sa), tau, Estimate(k, sk), cov, c_old, dof, int(t.size),
                       no_decay)
