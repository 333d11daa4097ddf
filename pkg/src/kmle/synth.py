"""Synthetic clustered VAR benchmarks.

Random stable VAR models are scaled to a target companion spectral radius
(or to a target signal-to-noise ratio) and simulated with Gaussian or
Student-t driving noise.

The signal-to-noise ratio of a stationary VAR with zero-lag covariance
``Pi`` and innovation covariance ``Sigma`` is taken as
``VSNR = lambda_max(Sigma^{-1/2} Pi Sigma^{-1/2}) / 2``, reported in dB.
White noise (``Pi = Sigma``) sits at ``10 log10(1/2) ~ -3.01`` dB; the
value does not change under a diagonal rescaling of the series.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from .data import Assignment, Dataset, validate_dataset
from .exceptions import Unachievable, Unstable, ValidationError
from .kvars import VarParams

__all__ = [
    "GenSpec",
    "WHITE_NOISE_DB",
    "gen_dataset",
    "gen_stable_var",
    "scale_lags",
    "scale_to_snr",
    "simulate_var",
    "stationary_covariance",
    "vsnr",
    "vsnr_db",
]

logger = logging.getLogger(__name__)

WHITE_NOISE_DB = 10.0 * np.log10(0.5)
RADIUS_CEILING = 0.999
SNR_TOL_DB = 0.01
MAX_MODEL_DRAWS = 100


@dataclass(frozen=True)
class GenSpec:
    m: int = 2
    p: int = 2
    t: int = 200
    k: int = 3
    n_per_cluster: int = 15
    noise: str = "gaussian"
    dof: Optional[float] = None
    target_snr_db: Optional[float] = None
    target_spectral_radius: float = 0.9
    seed: Optional[int] = None

    def __post_init__(self):
        if self.m < 1 or self.p < 0 or self.k < 1 or self.n_per_cluster < 1:
            raise ValidationError("m, k, n_per_cluster must be >= 1 and p >= 0")
        if self.t < self.p + 2:
            raise ValidationError(f"T={self.t} too short for p={self.p}")
        if self.noise not in ("gaussian", "student_t"):
            raise ValidationError(f"unknown noise {self.noise!r}")
        if self.noise == "student_t" and not (self.dof is not None and self.dof > 2):
            raise ValidationError("Student-t noise needs dof > 2")
        if not 0 < self.target_spectral_radius < 1:
            raise ValidationError("target_spectral_radius must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def scale_lags(params: VarParams, s: float) -> VarParams:
    """Multiply lag-``l`` coefficients by ``s**l``; companion eigenvalues scale by ``s``."""
    a = params.a.copy()
    m = params.m
    for ell in range(1, params.p + 1):
        a[:, 1 + (ell - 1) * m : 1 + ell * m] *= s**ell
    return VarParams(a=a, sigma=params.sigma, chol=params.chol, p=params.p)


def _random_chol(m, rng):
    chol = np.tril(rng.uniform(-1.0, 1.0, size=(m, m)), k=-1)
    chol[np.diag_indices(m)] = rng.uniform(0.5, 1.5, size=m)
    return chol


def gen_stable_var(m: int, p: int, radius: float, rng=None) -> VarParams:
    """Random VAR(p) with companion spectral radius ``radius``."""
    if not 0 < radius < 1:
        raise ValidationError(f"radius must lie in (0, 1), got {radius}")
    rng = np.random.default_rng(rng)
    intercept = rng.uniform(-1.0, 1.0, size=(m, 1))
    chol = _random_chol(m, rng)
    sigma = chol @ chol.T
    while True:
        lags = rng.uniform(-1.0, 1.0, size=(m, m * p))
        params = VarParams(a=np.hstack([intercept, lags]), sigma=sigma, chol=chol, p=p)
        if p == 0:
            return params
        rho = params.spectral_radius()
        if rho > 1e-12:
            return scale_lags(params, radius / rho)


def stationary_covariance(params: VarParams) -> np.ndarray:
    """Zero-lag autocovariance ``Pi`` of the stationary process."""
    m, p = params.m, params.p
    if p == 0:
        return params.sigma.copy()
    rho = params.spectral_radius()
    if rho >= 1:
        raise Unstable(f"spectral radius {rho:.6g} >= 1")
    comp = params.companion()
    q = np.zeros((m * p, m * p))
    q[:m, :m] = params.sigma
    state = linalg.solve_discrete_lyapunov(comp, q, method="direct")
    pi = state[:m, :m]
    return 0.5 * (pi + pi.T)


def vsnr(params: VarParams) -> float:
    pi = stationary_covariance(params)
    w, v = np.linalg.eigh(params.sigma)
    inv_sqrt = (v / np.sqrt(w)) @ v.T
    return 0.5 * float(np.linalg.eigvalsh(inv_sqrt @ pi @ inv_sqrt).max())


def vsnr_db(params: VarParams) -> float:
    return 10.0 * np.log10(vsnr(params))


def scale_to_snr(params: VarParams, target_db: float, tol_db: float = 0.01) -> VarParams:
    """Rescale the lag polynomial's roots until the SNR hits ``target_db``.

    Bisection on ``s`` in ``(0, s_max)``, ``s_max`` keeping the spectral
    radius below 0.999.
    """
    if tol_db <= 0:
        raise ValidationError("tol_db must be positive")
    if target_db < WHITE_NOISE_DB - tol_db:
        raise Unachievable(f"{target_db} dB is below the white-noise floor {WHITE_NOISE_DB:.4f} dB")
    rho = params.spectral_radius()
    if params.p == 0 or rho == 0:
        if abs(target_db - WHITE_NOISE_DB) <= tol_db:
            return params
        raise Unachievable("a model without dynamics only reaches the white-noise floor")

    def snr_at(s):
        return vsnr_db(scale_lags(params, s))

    if abs(snr_at(1.0) - target_db) <= tol_db and rho < RADIUS_CEILING:
        return params
    lo, hi = 0.0, RADIUS_CEILING / rho
    top = snr_at(hi)
    if target_db > top + tol_db:
        raise Unachievable(f"{target_db} dB exceeds the reachable {top:.4f} dB")
    if abs(top - target_db) <= tol_db:
        return scale_lags(params, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = snr_at(mid)
        if abs(val - target_db) <= tol_db:
            return scale_lags(params, mid)
        if val < target_db:
            lo = mid
        else:
            hi = mid
    raise Unachievable(f"bisection did not reach {target_db} dB")  # pragma: no cover


def _noise(rng, size, noise, dof):
    if noise == "gaussian":
        return rng.standard_normal(size)
    return rng.standard_t(dof, size) * np.sqrt((dof - 2.0) / dof)


def simulate_var(params: VarParams, t: int, rng=None, *, noise="gaussian", dof=None,
                 burn_in: Optional[int] = None) -> np.ndarray:
    """Simulate ``t`` observations (``m x t``) from a zero initial state."""
    rng = np.random.default_rng(rng)
    m, p = params.m, params.p
    burn = 10 * p + 100 if burn_in is None else burn_in
    total = t + burn
    eps = _noise(rng, (total, m), noise, dof) @ params.chol.T
    y = np.zeros((total + p, m))
    c = params.intercept
    lags = [params.lag(ell) for ell in range(1, p + 1)]
    for i in range(total):
        val = c + eps[i]
        for ell, a_l in enumerate(lags, start=1):
            val = val + a_l @ y[p + i - ell]
        y[p + i] = val
    return y[p + burn :].T.copy()


def _draw_model(spec: GenSpec, rng, max_draws: int = MAX_MODEL_DRAWS) -> VarParams:
    if spec.target_snr_db is not None and spec.target_snr_db < WHITE_NOISE_DB - SNR_TOL_DB:
        raise Unachievable(f"{spec.target_snr_db} dB is below the white-noise floor {WHITE_NOISE_DB:.4f} dB")
    for _ in range(max_draws):
        prm = gen_stable_var(spec.m, spec.p, spec.target_spectral_radius, rng)
        if spec.target_snr_db is None:
            return prm
        try:
            return scale_to_snr(prm, spec.target_snr_db, SNR_TOL_DB)
        except Unachievable:
            # this draw cannot reach the target below the radius ceiling
            continue
    raise Unachievable(f"no model in {max_draws} draws reaches {spec.target_snr_db} dB")


def gen_dataset(spec: GenSpec) -> Tuple[Dataset, Assignment, List[VarParams]]:
    """Draw ``k`` models and ``n_per_cluster`` series from each.

    With an SNR target, a model whose ceiling lies below the target is
    redrawn (up to 100 times) from the same stream.
    """
    root = np.random.SeedSequence(spec.seed)
    model_ss, series_ss = root.spawn(2)
    model_rngs = [np.random.default_rng(s) for s in model_ss.spawn(spec.k)]

    models = []
    for rng in model_rngs:
        prm = _draw_model(spec, rng)
        if prm.spectral_radius() >= 1:
            raise Unstable("generated model is not stable")  # pragma: no cover
        models.append(prm)

    streams = series_ss.spawn(spec.k * spec.n_per_cluster)
    series, labels = [], []
    for j, prm in enumerate(models):
        for i in range(spec.n_per_cluster):
            rng = np.random.default_rng(streams[j * spec.n_per_cluster + i])
            series.append(simulate_var(prm, spec.t, rng, noise=spec.noise, dof=spec.dof))
            labels.append(j)
    return validate_dataset(series), Assignment(np.array(labels), spec.k), models
