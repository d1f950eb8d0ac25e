"""Poisson-Gamma enrollment Monte Carlo.

Each site draws an enrollment rate and a startup delay from Gamma
distributions, then contributes monthly Poisson counts once active; a
trial's duration is the first month its cumulative enrollment reaches
the target.  Replications run on independent split RNG streams, so the
aggregate is reproducible and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import encode_trial
from .errors import DataError, StructuralError
from .models import ModelCheckpoint, predict_site_params
from .randdist import GammaParams, RngState

DEFAULT_CAP_MONTHS = 72.0
DEFAULT_REPLICATIONS = 1024
QUANTILE_LEVELS = (5, 25, 50, 75, 95)

# Months are simulated in blocks so early first passages skip most of
# the cap window; block boundaries never affect the draw stream prefix.
_MONTH_BLOCK = 12


@dataclass(frozen=True)
class SimSpec:
    """One trial's simulation inputs.

    ``direct_rates``/``direct_startups`` bypass the Gamma draws with
    fixed per-site values; they exist only so tests can pin rates
    against exact first-passage oracles.
    """

    n_sites: int
    target_enrollment: int
    rate_dist: GammaParams
    startup_dist: GammaParams
    time_step: float = 1.0
    cap_months: float = DEFAULT_CAP_MONTHS
    direct_rates: tuple | None = None
    direct_startups: tuple | None = None

    def __post_init__(self):
        if self.n_sites < 1:
            raise StructuralError("n_sites must be >= 1")
        if self.target_enrollment < 1:
            raise StructuralError("target_enrollment must be >= 1")
        if self.time_step <= 0.0:
            raise StructuralError("time_step must be positive")
        if self.cap_months < self.time_step:
            raise StructuralError("cap_months must be >= time_step")
        for name in ("direct_rates", "direct_startups"):
            fixed = getattr(self, name)
            if fixed is not None and len(fixed) != self.n_sites:
                raise StructuralError(f"{name} must list one value per site")


@dataclass(frozen=True)
class SimResult:
    duration_months: float
    censored: bool
    trajectory: tuple | None = None


@dataclass(frozen=True)
class DurationSummary:
    mean_months: float
    std_months: float
    quantiles: dict  # level percent -> months
    censor_fraction: float
    replications: int
    seed: int

    def to_json_dict(self, trial_id: str | None = None) -> dict:
        record = {
            "mean_months": self.mean_months,
            "std_months": self.std_months,
            "quantiles": {str(k): v for k, v in sorted(self.quantiles.items())},
            "censor_fraction": self.censor_fraction,
            "replications": self.replications,
            "seed": self.seed,
        }
        if trial_id is not None:
            record = {"trial_id": trial_id, **record}
        return record


def simulate_once(spec: SimSpec, rng: RngState,
                  record_trajectory: bool = False) -> SimResult:
    """One enrollment trajectory; duration is the first month (1-based,
    in ``time_step`` units) at which cumulative enrollment reaches the
    target, censored at the cap."""
    gen = rng.generator
    if spec.direct_rates is not None:
        mu = np.asarray(spec.direct_rates, dtype=np.float64)
    else:
        mu = gen.gamma(spec.rate_dist.shape, 1.0 / spec.rate_dist.rate,
                       size=spec.n_sites)
    if spec.direct_startups is not None:
        theta = np.asarray(spec.direct_startups, dtype=np.float64)
    else:
        theta = gen.gamma(spec.startup_dist.shape, 1.0 / spec.startup_dist.rate,
                          size=spec.n_sites)

    dt = spec.time_step
    total_steps = int(np.floor(spec.cap_months / dt + 1e-9))
    target = spec.target_enrollment
    cumulative = 0
    trajectory: list = []
    for block_start in range(0, total_steps, _MONTH_BLOCK):
        steps = np.arange(block_start + 1,
                          min(block_start + _MONTH_BLOCK, total_steps) + 1)
        # months of active exposure inside each step window
        exposure = np.clip(steps[:, None] * dt - theta[None, :], 0.0, dt)
        counts = gen.poisson(mu[None, :] * exposure)
        running = cumulative + counts.sum(axis=1).cumsum()
        if record_trajectory:
            trajectory.extend(int(v) for v in running)
        hit = int(np.searchsorted(running, target))
        if hit < len(running):
            duration = float(steps[hit] * dt)
            if record_trajectory:
                del trajectory[block_start + hit + 1:]
            return SimResult(duration, censored=False,
                             trajectory=tuple(trajectory) if record_trajectory else None)
        cumulative = int(running[-1])
    return SimResult(float(total_steps * dt), censored=True,
                     trajectory=tuple(trajectory) if record_trajectory else None)


def estimate_duration(spec: SimSpec, replications: int = DEFAULT_REPLICATIONS,
                      seed: int = 0) -> DurationSummary:
    """Replicated simulation: mean, spread quantiles, censor fraction.

    Each replication runs on its own split stream, so results do not
    depend on execution order and replication i is stable as the
    replication count grows.
    """
    if replications < 1:
        raise StructuralError("replications must be >= 1")
    streams = RngState(seed).split(replications)
    durations = np.empty(replications)
    censored = np.empty(replications, dtype=bool)
    for i, stream in enumerate(streams):
        result = simulate_once(spec, stream)
        durations[i] = result.duration_months
        censored[i] = result.censored
    quantiles = {
        level: float(q) for level, q in
        zip(QUANTILE_LEVELS, np.quantile(durations, [l / 100.0 for l in QUANTILE_LEVELS]))
    }
    return DurationSummary(
        mean_months=float(durations.mean()),
        std_months=float(durations.std()),
        quantiles=quantiles,
        censor_fraction=float(censored.mean()),
        replications=replications,
        seed=seed,
    )


def predict_trial_duration(checkpoint: ModelCheckpoint, record, embedding_row,
                           replications: int = DEFAULT_REPLICATIONS,
                           seed: int = 0,
                           cap_months: float = DEFAULT_CAP_MONTHS) -> DurationSummary:
    """Model-driven forecast: predicted site distributions fed into the
    Monte Carlo with the trial's planned sites and target enrollment."""
    if record.planned_sites is None or record.planned_sites < 1:
        raise DataError(f"{record.trial_id}: planned_sites missing")
    if record.planned_participants is None or record.planned_participants < 1:
        raise DataError(f"{record.trial_id}: planned_participants missing")
    encoded = encode_trial(checkpoint.vocab, checkpoint.zscore, record, embedding_row)
    params = predict_site_params(checkpoint, encoded)
    spec = SimSpec(
        n_sites=record.planned_sites,
        target_enrollment=record.planned_participants,
        rate_dist=params.rate_dist,
        startup_dist=params.startup_dist,
        cap_months=cap_months,
    )
    return estimate_duration(spec, replications, seed)
