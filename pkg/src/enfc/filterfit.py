"""Similarity filtering plus Gamma MLE: the non-learned duration
forecaster.

Historical trials overlapping the query on every categorical feature
contribute their observed site rates and startup times to one pooled
sample per quantity; Gamma distributions fitted to the pools drive the
same Monte Carlo as the learned model.  Two fitters are provided: the
gradient route (RMSprop on log-parameters) and an independent Newton
solver used as oracle and fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffgraph as dg
from .dataio import sites_by_trial
from .errors import (DegenerateDataError, DomainError, InsufficientDataError,
                     NumericError)
from .pgsim import (DEFAULT_CAP_MONTHS, DEFAULT_REPLICATIONS, DurationSummary,
                    SimSpec, estimate_duration)
from .randdist import GammaParams, RngState
from .specfun import digamma

SIMILARITY_FEATURES = ("phase", "countries", "therapeutic_areas", "sponsors")
MIN_SAMPLES = 30

# fitting targets share the support shift used for site-level training
SAMPLE_SHIFT = 1e-6

_NEWTON_MAX_ITERATIONS = 100
_NEWTON_RELATIVE_TOL = 1e-10


@dataclass(frozen=True)
class SimilarityQuery:
    """Per-feature value sets a corpus trial must overlap, one and all."""

    features: tuple
    values: tuple  # frozensets aligned with features

    @classmethod
    def from_record(cls, record, features=SIMILARITY_FEATURES) -> "SimilarityQuery":
        return cls(tuple(features),
                   tuple(frozenset(getattr(record, f)) for f in features))

    def matches(self, record) -> bool:
        return all(values & set(getattr(record, feature))
                   for feature, values in zip(self.features, self.values))


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 512
    seed: int = 0


@dataclass(frozen=True)
class FilterFitForecast:
    summary: DurationSummary
    rate_dist: GammaParams
    startup_dist: GammaParams
    n_similar: int
    n_samples: int

    def to_json_dict(self, trial_id: str | None = None) -> dict:
        record = self.summary.to_json_dict(trial_id)
        record["rate_dist"] = {"shape": self.rate_dist.shape,
                               "rate": self.rate_dist.rate}
        record["startup_dist"] = {"shape": self.startup_dist.shape,
                                  "rate": self.startup_dist.rate}
        record["n_similar"] = self.n_similar
        record["n_samples"] = self.n_samples
        return record


def find_similar(query, corpus, features=SIMILARITY_FEATURES) -> list:
    """Corpus trials overlapping the query on every feature; the query
    itself (by trial id) never appears in its own result."""
    probe = SimilarityQuery.from_record(query, features)
    return [record for record in corpus
            if record.trial_id != query.trial_id and probe.matches(record)]


def _validated_samples(samples) -> np.ndarray:
    values = np.asarray(list(samples), dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise InsufficientDataError(
            f"Gamma fit needs at least 2 samples, got {values.size}")
    if np.any(values <= 0.0):
        raise DomainError("Gamma fit samples must be positive")
    if np.ptp(values) == 0.0:
        raise DegenerateDataError("Gamma fit samples have zero variance")
    return values


def _trigamma(x: float) -> float:
    # recurrence up to x >= 10, then the asymptotic Bernoulli series
    value = 0.0
    while x < 10.0:
        value += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0
                                              + inv2 * (-1.0 / 30.0
                                                        + inv2 * (1.0 / 42.0
                                                                  - inv2 / 30.0)))))
    return value + series


def fit_gamma_newton(samples) -> GammaParams:
    """Direct MLE: solve ln(shape) - digamma(shape) = s for the pooled
    statistic s = ln(mean) - mean(ln x), then rate = shape/mean."""
    values = _validated_samples(samples)
    mean = float(values.mean())
    statistic = math.log(mean) - float(np.log(values).mean())
    if statistic <= 0.0:  # numerically indistinguishable from zero variance
        raise DegenerateDataError("Gamma fit samples have zero log-spread")
    shape = (3.0 - statistic + math.sqrt((statistic - 3.0) ** 2
                                         + 24.0 * statistic)) / (12.0 * statistic)
    for _ in range(_NEWTON_MAX_ITERATIONS):
        residual = math.log(shape) - digamma(shape) - statistic
        step = residual / (1.0 / shape - _trigamma(shape))
        updated = shape - step
        if updated <= 0.0:
            updated = shape / 2.0
        delta = abs(updated - shape)
        shape = updated
        if delta <= _NEWTON_RELATIVE_TOL * shape:
            return GammaParams(shape, shape / mean)
    raise NumericError(
        f"Gamma MLE did not converge in {_NEWTON_MAX_ITERATIONS} iterations")


def fit_gamma_gradient(samples, config: FitConfig = FitConfig()) -> GammaParams:
    """MLE by RMSprop on (ln shape, ln rate): a stochastic minibatch
    phase over seven eighths of the epoch budget, then a deterministic
    full-sample polish with a geometrically annealed step size.

    The polish exists because at a fixed step size the optimizer ends
    in a limit cycle around the optimum rather than on it, and skewed
    minibatch gradients push the cycle's center off the optimum by an
    amount the step size does not control.  Restarting the second
    moment state on the exact mean NLL and decaying the step 256-fold
    collapses the cycle onto the optimum; the returned parameters
    average the final two iterates.  Initialized at the method-of-
    moments estimate so the budget is spent settling, not traveling.
    Deterministic given ``config.seed``.
    """
    values = _validated_samples(samples)
    mean = float(values.mean())
    variance = float(values.var())
    shape_logit = dg.parameter(
        np.array([[math.log(max(mean * mean / variance, 1e-6))]]), "shape_logit")
    rate_logit = dg.parameter(
        np.array([[math.log(max(mean / variance, 1e-6))]]), "rate_logit")
    params = [shape_logit, rate_logit]
    optimizer = dg.RMSprop(params, lr=config.learning_rate)
    shuffle = RngState(config.seed)

    n = values.size
    polish_epochs = max(config.epochs // 8, 1)
    for _ in range(max(config.epochs - polish_epochs, 0)):
        order = shuffle.generator.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = values[order[start:start + config.batch_size]]
            ones = dg.constant(np.ones((batch.size, 1)))
            loss = dg.gamma_nll_loss(dg.matmul(ones, shape_logit),
                                     dg.matmul(ones, rate_logit), batch)
            dg.zero_grads(params)
            dg.backward(loss)
            optimizer.step()

    optimizer = dg.RMSprop(params, lr=config.learning_rate)
    polish_steps = 8 * polish_epochs
    ones = dg.constant(np.ones((n, 1)))
    tail = np.zeros(2)
    for step in range(polish_steps):
        optimizer.lr = config.learning_rate * 0.5 ** (8.0 * (step + 1) / polish_steps)
        loss = dg.gamma_nll_loss(dg.matmul(ones, shape_logit),
                                 dg.matmul(ones, rate_logit), values)
        dg.zero_grads(params)
        dg.backward(loss)
        optimizer.step()
        if step >= polish_steps - 2:
            tail += (float(shape_logit.data[0, 0]), float(rate_logit.data[0, 0]))
    return GammaParams(math.exp(tail[0] / 2.0), math.exp(tail[1] / 2.0))


def pooled_site_samples(query, corpus, sites, features=SIMILARITY_FEATURES):
    """Rates and startup times of every site belonging to a similar
    trial, shifted into positive support."""
    similar = find_similar(query, corpus, features)
    grouped = sites_by_trial(sites)
    rates, startups = [], []
    for record in similar:
        for site in grouped.get(record.trial_id, []):
            rates.append(site.rate + SAMPLE_SHIFT)
            startups.append(site.startup_months + SAMPLE_SHIFT)
    return np.array(rates), np.array(startups), len(similar)


def predict_duration_filterfit(query, corpus, sites,
                               replications: int = DEFAULT_REPLICATIONS,
                               seed: int = 0,
                               min_samples: int = MIN_SAMPLES,
                               fit_config: FitConfig = FitConfig(),
                               features=SIMILARITY_FEATURES,
                               cap_months: float = DEFAULT_CAP_MONTHS) -> FilterFitForecast:
    """Fit Gammas to the pooled similar-trial site samples, then run the
    enrollment Monte Carlo with the query's plan."""
    rates, startups, n_similar = pooled_site_samples(query, corpus, sites, features)
    if rates.size < min_samples:
        raise InsufficientDataError(
            f"{query.trial_id}: only {rates.size} site samples from "
            f"{n_similar} similar trials, need {min_samples}")

    def fit(pool):
        try:
            return fit_gamma_gradient(pool, fit_config)
        except NumericError:
            return fit_gamma_newton(pool)

    rate_dist = fit(rates)
    startup_dist = fit(startups)
    spec = SimSpec(n_sites=query.planned_sites,
                   target_enrollment=query.planned_participants,
                   rate_dist=rate_dist, startup_dist=startup_dist,
                   cap_months=cap_months)
    summary = estimate_duration(spec, replications, seed)
    return FilterFitForecast(summary=summary, rate_dist=rate_dist,
                             startup_dist=startup_dist, n_similar=n_similar,
                             n_samples=int(rates.size))
