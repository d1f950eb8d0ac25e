"""Gamma and Poisson distributions plus a seedable, splittable RNG.

Sampling is delegated to numpy's PCG64-backed ``Generator`` (its gamma
sampler is the Marsaglia-Tsang squeeze method with the U^(1/alpha) boost
for shape < 1; its Poisson sampler switches from inversion to transformed
rejection at large rates).  Densities and quantiles are computed with the
in-house special functions so that samplers and analytic CDFs stay
independent of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .specfun import inv_reg_lower_inc_gamma, ln_gamma, reg_lower_inc_gamma

__all__ = [
    "GammaParams",
    "RngState",
    "gamma_log_pdf",
    "gamma_cdf",
    "gamma_sample",
    "gamma_sample_array",
    "gamma_quantile",
    "gamma_mean",
    "poisson_sample",
    "poisson_sample_array",
]


@dataclass(frozen=True)
class GammaParams:
    """Shape/rate parameterization: density p(x) = rate^shape / Gamma(shape)
    * x^(shape-1) * exp(-rate*x) on x > 0."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0.0 and math.isfinite(self.shape)):
            raise DomainError(f"Gamma shape must be positive, got {self.shape!r}")
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise DomainError(f"Gamma rate must be positive, got {self.rate!r}")


class RngState:
    """Deterministic random stream with an explicit 64-bit seed.

    Identical seeds produce identical sample streams.  ``split`` derives
    independent child streams (one per simulation replication) without
    perturbing the parent, so concurrent consumers never share state.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n: int) -> list["RngState"]:
        """n independent child streams; deterministic in the parent seed."""
        if n < 0:
            raise DomainError(f"cannot split into {n} streams")
        return [RngState(self.seed, _seq=child) for child in self._seq.spawn(n)]

    def __repr__(self):
        return f"RngState(seed={self.seed})"


def gamma_log_pdf(params: GammaParams, x: float) -> float:
    """Log density: shape*ln(rate) - lnGamma(shape) + (shape-1)*ln(x) - rate*x."""
    if not (x > 0.0):
        raise DomainError(f"Gamma log-pdf requires x > 0, got {x!r}")
    a, lam = params.shape, params.rate
    return a * math.log(lam) - ln_gamma(a) + (a - 1.0) * math.log(x) - lam * x


def gamma_cdf(params: GammaParams, x: float) -> float:
    """P(X <= x) via the regularized lower incomplete gamma function."""
    if x <= 0.0:
        return 0.0
    return reg_lower_inc_gamma(params.shape, params.rate * x)


def gamma_sample(params: GammaParams, rng: RngState) -> float:
    """One draw from Gamma(shape, rate); deterministic given the stream."""
    return float(rng.generator.gamma(params.shape, 1.0 / params.rate))


def gamma_sample_array(params: GammaParams, size, rng: RngState) -> np.ndarray:
    """Vectorized draws, used by the Monte Carlo simulator."""
    return rng.generator.gamma(params.shape, 1.0 / params.rate, size=size)


def gamma_quantile(params: GammaParams, p: float) -> float:
    """x with CDF(x) = p, for p in (0, 1)."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"quantile requires 0 < p < 1, got {p!r}")
    return inv_reg_lower_inc_gamma(params.shape, p) / params.rate


def gamma_mean(params: GammaParams) -> float:
    return params.shape / params.rate


def poisson_sample(rate: float, rng: RngState) -> int:
    """One Poisson(rate) count; rate 0 degenerates to 0."""
    if not (rate >= 0.0 and math.isfinite(rate)):
        raise DomainError(f"Poisson rate must be finite and >= 0, got {rate!r}")
    return int(rng.generator.poisson(rate))


def poisson_sample_array(rates: np.ndarray, rng: RngState) -> np.ndarray:
    """Vectorized Poisson draws with per-element rates (all finite, >= 0)."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.size and (not np.all(np.isfinite(rates)) or np.any(rates < 0.0)):
        raise DomainError("Poisson rates must be finite and >= 0")
    return rng.generator.poisson(rates)
