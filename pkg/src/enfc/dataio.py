"""Trial data model, file formats, splitting, and the synthetic generator.

Trial and site records travel as line-delimited JSON; embeddings as a
small binary matrix format (magic "EMB1").  The synthetic generator
stands in for the proprietary trial registry: it samples attributes from
fixed vocabularies, drives enrollment through per-site Poisson processes
with Gamma-distributed rates, and emits every ground-truth latent to a
sidecar so tests can compare against the generating process, including
an analytic mean-absolute-error floor for the study-level task.

Generator coefficients live in data/generator_coefficients.json, which
is versioned with the package so generated corpora are stable.
"""

from __future__ import annotations

import json
import logging
import math
import re
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from . import encoding
from .errors import DomainError, FormatError, StructuralError, ValidationError
from .randdist import RngState

logger = logging.getLogger("enfc.dataio")

VALID_STATUSES = ("Completed", "Closed", "Other")

# fixed JSONL field order; also the authoritative schema for load_trials
_TRIAL_FIELDS = (
    "trial_id", "phase", "countries", "therapeutic_areas", "sponsors",
    "title", "objective", "mechanism_of_action", "indication",
    "inclusion_criteria", "exclusion_criteria",
    "planned_participants", "planned_sites", "status",
    "actual_enrollment", "duration_months",
)
_SET_FIELDS = ("phase", "countries", "therapeutic_areas", "sponsors")
_TEXT_FIELDS = ("title", "objective", "mechanism_of_action", "indication",
                "inclusion_criteria", "exclusion_criteria")


@dataclass
class TrialRecord:
    """One clinical trial: categorical sets, free texts, plan, and outcome."""

    trial_id: str
    phase: set = field(default_factory=set)
    countries: set = field(default_factory=set)
    therapeutic_areas: set = field(default_factory=set)
    sponsors: set = field(default_factory=set)
    title: str | None = None
    objective: str | None = None
    mechanism_of_action: str | None = None
    indication: str | None = None
    inclusion_criteria: str | None = None
    exclusion_criteria: str | None = None
    planned_participants: int = 1
    planned_sites: int = 1
    status: str = "Other"
    actual_enrollment: int | None = None
    duration_months: float | None = None

    def __post_init__(self):
        if not self.trial_id:
            raise ValidationError("trial_id must be nonempty")
        for name in _SET_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, set):
                setattr(self, name, set(value))
        if self.planned_participants < 1:
            raise ValidationError(
                f"{self.trial_id}: planned_participants must be >= 1")
        if self.planned_sites < 1:
            raise ValidationError(f"{self.trial_id}: planned_sites must be >= 1")
        if self.status not in VALID_STATUSES:
            raise ValidationError(
                f"{self.trial_id}: status {self.status!r} not in {VALID_STATUSES}")
        if self.actual_enrollment is not None and self.actual_enrollment < 1:
            raise ValidationError(
                f"{self.trial_id}: actual_enrollment must be >= 1 when present")
        if self.duration_months is not None and self.duration_months <= 0:
            raise ValidationError(f"{self.trial_id}: duration_months must be > 0")

    def to_json_dict(self) -> dict:
        out = {}
        for name in _TRIAL_FIELDS:
            value = getattr(self, name)
            if name in _SET_FIELDS:
                value = sorted(value)
            out[name] = value
        return out


@dataclass
class SiteOutcome:
    """Observed per-site result: patients, startup delay, derived rate."""

    trial_id: str
    site_id: str
    patients: int
    startup_months: float
    rate: float

    def __post_init__(self):
        if self.patients < 0:
            raise ValidationError(f"{self.site_id}: patients must be >= 0")
        if self.startup_months < 0:
            raise ValidationError(f"{self.site_id}: startup_months must be >= 0")
        if self.rate < 0:
            raise ValidationError(f"{self.site_id}: rate must be >= 0")


@dataclass
class LoadReport:
    """Per-load tally of ignored unknown fields."""

    unknown_fields: Counter = field(default_factory=Counter)
    lines_read: int = 0


def derive_site_rate(trial_id: str, site_id: str, patients: int,
                     startup_months: float, trial_duration: float) -> SiteOutcome:
    """Enrollment rate as patients over the site's active window."""
    if trial_duration <= 0:
        raise ValidationError(f"{site_id}: trial duration must be > 0")
    if startup_months >= trial_duration:
        raise ValidationError(
            f"{site_id}: startup {startup_months} months does not precede "
            f"trial end at {trial_duration} months")
    rate = patients / (trial_duration - startup_months)
    return SiteOutcome(trial_id, site_id, patients, startup_months, rate)


# ---------------------------------------------------------------------------
# JSONL trial and site files


def save_trials(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")


def load_trials(path, report: LoadReport | None = None) -> list:
    known = set(_TRIAL_FIELDS)
    records = []
    seen: dict[str, int] = {}
    for lineno, raw in _read_jsonl(path):
        unknown = [k for k in raw if k not in known]
        for k in unknown:
            if report is not None:
                report.unknown_fields[k] += 1
            logger.warning("%s line %d: ignoring unknown field %r", path, lineno, k)
        kwargs = {k: raw[k] for k in known if k in raw}
        try:
            rec = TrialRecord(**kwargs)
        except (ValidationError, TypeError) as exc:
            raise ValidationError(f"{path} line {lineno}: {exc}") from exc
        if rec.trial_id in seen:
            raise ValidationError(
                f"{path}: duplicate trial_id {rec.trial_id!r} on lines "
                f"{seen[rec.trial_id]} and {lineno}")
        seen[rec.trial_id] = lineno
        records.append(rec)
        if report is not None:
            report.lines_read = lineno
    return records


def save_sites(path, sites) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sites:
            fh.write(json.dumps({
                "trial_id": s.trial_id, "site_id": s.site_id,
                "patients": s.patients, "startup_months": s.startup_months,
                "rate": s.rate,
            }) + "\n")


def load_sites(path) -> list:
    sites = []
    seen: dict[tuple, int] = {}
    for lineno, raw in _read_jsonl(path):
        try:
            site = SiteOutcome(raw["trial_id"], raw["site_id"], raw["patients"],
                               raw["startup_months"], raw["rate"])
        except (KeyError, ValidationError, TypeError) as exc:
            raise ValidationError(f"{path} line {lineno}: {exc}") from exc
        key = (site.trial_id, site.site_id)
        if key in seen:
            raise ValidationError(
                f"{path}: duplicate site {key} on lines {seen[key]} and {lineno}")
        seen[key] = lineno
        sites.append(site)
    return sites


def sites_by_trial(sites) -> dict:
    grouped: dict[str, list] = {}
    for s in sites:
        grouped.setdefault(s.trial_id, []).append(s)
    return grouped


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path} line {lineno}: {exc}") from exc
            if not isinstance(raw, dict):
                raise FormatError(f"{path} line {lineno}: expected a JSON object")
            yield lineno, raw


# ---------------------------------------------------------------------------
# binary embedding matrix

_EMB_MAGIC = b"EMB1"


def save_embeddings(path, ids, matrix) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise StructuralError(f"embedding matrix must be 2-D, got {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise StructuralError(
            f"{len(ids)} ids for {matrix.shape[0]} embedding rows")
    _check_embedding_finite(ids, matrix)
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        for trial_id in ids:
            encoded = trial_id.encode("utf-8")
            if b"\x00" in encoded:
                raise ValidationError(f"trial id {trial_id!r} contains NUL")
            fh.write(encoded + b"\x00")
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_embeddings(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_EMB_MAGIC!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    n, d = struct.unpack("<II", blob[4:12])
    ids, offset = [], 12
    for _ in range(n):
        end = blob.find(b"\x00", offset)
        if end < 0:
            raise FormatError(f"{path}: unterminated id block")
        ids.append(blob[offset:end].decode("utf-8"))
        offset = end + 1
    expected = n * d * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    _check_embedding_finite(ids, matrix)
    return ids, matrix


def _check_embedding_finite(ids, matrix):
    finite = np.isfinite(matrix)
    if not finite.all():
        row = int(np.nonzero(~finite.all(axis=1))[0][0])
        raise ValidationError(
            f"embedding row {row} (trial {ids[row]!r}) contains non-finite values")


# ---------------------------------------------------------------------------
# splitting and filtering


def split_dataset(records, sizes, seed):
    """Stratified train/dev/test split by deciles of actual enrollment."""
    records = list(records)
    if len(sizes) != 3 or any(int(s) != s or s < 0 for s in sizes):
        raise StructuralError(f"sizes must be three nonnegative integers: {sizes}")
    sizes = tuple(int(s) for s in sizes)
    if sum(sizes) > len(records):
        raise StructuralError(
            f"requested {sum(sizes)} records from {len(records)}")
    gen = RngState(seed).generator

    labels = [r.actual_enrollment for r in records]
    if len(records) < 10 or any(v is None for v in labels):
        logger.warning("split_dataset: cannot stratify, falling back to random split")
        order = gen.permutation(len(records))
        return _take_splits(records, order, sizes)

    values = np.array(labels, dtype=float)
    edges = np.quantile(values, np.linspace(0.1, 0.9, 9))
    strata = np.searchsorted(edges, values, side="left")
    if len(set(strata.tolist())) < 2:
        logger.warning("split_dataset: degenerate strata, falling back to random split")
        order = gen.permutation(len(records))
        return _take_splits(records, order, sizes)

    queues = {}
    for k in sorted(set(strata.tolist())):
        members = np.nonzero(strata == k)[0]
        queues[k] = list(members[gen.permutation(len(members))])
    stratum_sizes = {k: len(q) for k, q in queues.items()}
    remaining = dict(stratum_sizes)
    total = len(records)

    splits = []
    for size in sizes:
        quotas = {k: size * m / total for k, m in stratum_sizes.items()}
        alloc = {k: min(int(math.floor(q)), remaining[k]) for k, q in quotas.items()}
        short = size - sum(alloc.values())
        by_frac = sorted(quotas, key=lambda k: (-(quotas[k] - math.floor(quotas[k])), k))
        cursor = 0
        while short > 0:
            k = by_frac[cursor % len(by_frac)]
            cursor += 1
            if remaining[k] - alloc[k] > 0:
                alloc[k] += 1
                short -= 1
            if cursor > 10 * len(by_frac):
                break
        chosen = []
        for k, count in alloc.items():
            take, queues[k] = queues[k][:count], queues[k][count:]
            remaining[k] -= count
            chosen.extend(take)
        splits.append([records[i] for i in sorted(chosen)])
    return tuple(splits)


def _take_splits(records, order, sizes):
    out, start = [], 0
    for size in sizes:
        idx = sorted(order[start:start + size].tolist())
        out.append([records[i] for i in idx])
        start += size
    return tuple(out)


def filter_pg_eligible(records) -> list:
    """Trials suitable for duration modeling: >10 sites, 6-36 month duration."""
    return [r for r in records
            if r.planned_sites > 10
            and r.duration_months is not None
            and 6.0 <= r.duration_months <= 36.0]


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    n_trials: int
    mode: str = "study"  # study: enrollment-count targets; duration: first-passage
    id_prefix: str = "TRL"
    embedding_dim: int = 64
    embedding_noise: float | None = None

    def __post_init__(self):
        if self.n_trials < 1:
            raise StructuralError("n_trials must be >= 1")
        if self.mode not in ("study", "duration"):
            raise StructuralError(f"unknown generator mode {self.mode!r}")
        if self.embedding_dim < 1:
            raise StructuralError("embedding_dim must be >= 1")


@dataclass
class GeneratedData:
    trials: list
    sites: list
    embedding_ids: list
    embeddings: np.ndarray
    latents: list


@lru_cache(maxsize=1)
def _coefficients() -> dict:
    blob = resources.files("enfc").joinpath("data/generator_coefficients.json")
    return json.loads(blob.read_text(encoding="utf-8"))


def lognormal_l1_factor(sigma: float) -> float:
    """E|exp(sigma Z) - 1| for standard normal Z: the L1 cost of lognormal
    noise around its median."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    phi = 0.5 * (1.0 + math.erf(sigma / math.sqrt(2.0)))
    return math.exp(0.5 * sigma * sigma) * (2.0 * phi - 1.0)


def analytic_noise_floor(latents) -> float:
    """Expected test MAE of the best attribute-informed predictor, computed
    from the generator's per-trial log-signal g and residual sigma."""
    terms = []
    for lat in latents:
        if lat.get("mode") != "study":
            raise StructuralError("noise floor is defined for study-mode latents")
        terms.append(math.exp(lat["g"]) * lognormal_l1_factor(lat["sigma"]))
    if not terms:
        raise StructuralError("no latents supplied")
    return float(np.mean(terms))


def generate_synthetic(config: GeneratorConfig, seed: int) -> GeneratedData:
    coef = _coefficients()
    attr_rng, outcome_rng, emb_rng = RngState(seed).split(3)
    a = attr_rng.generator
    o = outcome_rng.generator

    phases = coef["phases"]
    phase_weights = np.array([p["weight"] for p in phases])
    phase_weights = phase_weights / phase_weights.sum()
    tas = coef["therapeutic_areas"]
    sponsors = coef["sponsors"]
    sponsor_weights = 1.0 / np.arange(1, len(sponsors) + 1)
    sponsor_weights = sponsor_weights / sponsor_weights.sum()
    countries = coef["countries"]

    trials, sites, latents = [], [], []
    texts = []
    for i in range(config.n_trials):
        trial_id = f"{config.id_prefix}-{i:06d}"
        ph = phases[a.choice(len(phases), p=phase_weights)]
        ta = tas[a.integers(0, len(tas))]
        indication = ta["indications"][a.integers(0, len(ta["indications"]))]
        variant = indication["variants"][a.integers(0, len(indication["variants"]))]
        sponsor = sponsors[a.choice(len(sponsors), p=sponsor_weights)]
        n_countries = int(min(1 + a.poisson(2.2), 8))
        chosen_countries = [countries[j]
                            for j in a.choice(len(countries), size=n_countries,
                                              replace=False)]
        moa = ta["mechanisms"][a.integers(0, len(ta["mechanisms"]))]
        drug = f"CMP-{a.integers(1000, 10000)}"
        inclusion = "; ".join(
            coef["inclusion_fragments"][j]
            for j in sorted(a.choice(len(coef["inclusion_fragments"]),
                                     size=3, replace=False)))
        exclusion = "; ".join(
            coef["exclusion_fragments"][j]
            for j in sorted(a.choice(len(coef["exclusion_fragments"]),
                                     size=3, replace=False)))

        common = dict(
            trial_id=trial_id,
            phase={ph["name"]},
            countries=set(chosen_countries),
            therapeutic_areas={ta["name"]},
            sponsors={sponsor["name"]},
            title=f"A Phase {ph['name']} Study of {drug} in Patients With "
                  f"{variant['text']}",
            objective=f"To assess the efficacy and safety of {drug} in "
                      f"participants with {variant['text']}",
            mechanism_of_action=moa,
            indication=variant["text"],
            inclusion_criteria=inclusion,
            exclusion_criteria=exclusion,
        )

        if config.mode == "study":
            rec, trial_sites, latent = _study_outcome(
                coef, common, ph, ta, variant, sponsor, n_countries, o)
        else:
            rec, trial_sites, latent = _duration_outcome(
                coef, common, ph, ta, variant, sponsor, o)
        trials.append(rec)
        sites.extend(trial_sites)
        latents.append(latent)
        texts.append(encoding.serialize_context(rec))

    emb_cfg = coef["embedding"]
    noise = (config.embedding_noise if config.embedding_noise is not None
             else emb_cfg["noise_sigma"])
    matrix = _embed_texts(texts, config.embedding_dim, emb_cfg["hash_buckets"],
                          emb_cfg["projection_seed"], noise, emb_rng.generator)
    return GeneratedData(trials, sites, [t.trial_id for t in trials],
                         matrix, latents)


def _attribute_signal(coef, ph, ta, variant, sponsor, n_countries, log_sites):
    return (coef["base_log_enrollment"]
            + ph["coef"] + ta["coef"] + variant["coef"] + sponsor["coef"]
            + coef["beta_log_sites"] * (log_sites - coef["ref_log_sites"])
            + coef["beta_log_countries"]
            * (math.log(n_countries) - coef["ref_log_countries"]))


def _study_outcome(coef, common, ph, ta, variant, sponsor, n_countries, o):
    cfg = coef["study"]
    n_sites = int(np.clip(round(math.exp(o.normal(cfg["log_sites_mean"],
                                                  cfg["log_sites_sigma"]))),
                          cfg["sites_min"], cfg["sites_max"]))
    tau = float(np.clip(round(math.exp(o.normal(cfg["log_duration_mean"],
                                                cfg["log_duration_sigma"]))),
                        cfg["duration_min"], cfg["duration_max"]))
    g = _attribute_signal(coef, ph, ta, variant, sponsor, n_countries,
                          math.log(n_sites))
    eps = float(o.normal(0.0, cfg["sigma_latent"]))
    expected_total = math.exp(g + eps)
    mu_bar = expected_total / (n_sites * tau)
    k_mu = cfg["site_rate_shape"]
    mu_s = o.gamma(k_mu, mu_bar / k_mu, size=n_sites)
    patients = o.poisson(mu_s * tau)
    if patients.sum() == 0:
        patients[0] = 1
    total = int(patients.sum())

    planned = max(1, round(math.exp(
        g + o.normal(cfg["optimism_log_bias"], cfg["optimism_sigma"]))))
    status = "Completed" if o.random() < 0.9 else "Closed"
    rec = TrialRecord(planned_participants=planned, planned_sites=n_sites,
                      status=status, actual_enrollment=total,
                      duration_months=tau, **common)
    trial_sites = [
        derive_site_rate(rec.trial_id, f"{rec.trial_id}-S{k:03d}",
                         int(patients[k]), 0.0, tau)
        for k in range(n_sites)
    ]
    # residual spread of ln(actual) beyond g: latent noise plus the
    # Poisson-Gamma fluctuation of the site sum, evaluated at eps = 0
    sigma = math.sqrt(cfg["sigma_latent"] ** 2
                      + 1.0 / math.exp(g)
                      + 1.0 / (n_sites * k_mu))
    latent = {"trial_id": rec.trial_id, "mode": "study", "g": g, "epsilon": eps,
              "sigma": sigma, "expected_total": expected_total,
              "n_sites": n_sites, "tau": tau}
    return rec, trial_sites, latent


def _duration_outcome(coef, common, ph, ta, variant, sponsor, o):
    cfg = coef["duration"]
    n_sites = int(np.clip(round(math.exp(o.normal(cfg["log_sites_mean"],
                                                  cfg["log_sites_sigma"]))),
                          cfg["sites_min"], cfg["sites_max"]))
    eps = float(o.normal(0.0, cfg["sigma_latent"]))
    log_mu = (cfg["base_log_rate"]
              + cfg["attr_coef_scale"] * (ph["coef"] + ta["coef"])
              + cfg["variant_coef_scale"] * variant["coef"]
              + cfg["sponsor_coef_scale"] * sponsor["coef"]
              + eps)
    mu_bar = math.exp(log_mu)
    theta_bar = math.exp(cfg["base_log_startup"]
                         + cfg["startup_phase_scale"] * ph["duration_coef"])
    k_mu, k_theta = cfg["site_rate_shape"], cfg["startup_shape"]
    target_month = float(o.uniform(cfg["target_month_min"],
                                   cfg["target_month_max"]))
    planned = max(10, round(n_sites * mu_bar * max(target_month - theta_bar, 1.0)))

    mu_s = o.gamma(k_mu, mu_bar / k_mu, size=n_sites)
    theta_s = o.gamma(k_theta, theta_bar / k_theta, size=n_sites)
    cap = int(cfg["cap_months"])
    patients = np.zeros(n_sites, dtype=np.int64)
    cumulative = 0
    duration = float(cap)
    censored = True
    for month in range(1, cap + 1):
        exposure = np.clip(month - theta_s, 0.0, 1.0)
        counts = o.poisson(mu_s * exposure)
        patients += counts
        cumulative += int(counts.sum())
        if cumulative >= planned:
            duration = float(month)
            censored = False
            break
    if cumulative == 0:
        # degenerate guard (unreachable at the configured rates): keep the
        # site-sum invariant by crediting the patient to a contributing site
        patients[0] = 1
        cumulative = 1
        theta_s[0] = min(theta_s[0], max(duration - 1.0, 0.0))

    rec = TrialRecord(planned_participants=planned, planned_sites=n_sites,
                      status="Closed" if censored else "Completed",
                      actual_enrollment=int(cumulative),
                      duration_months=duration, **common)
    trial_sites = [
        derive_site_rate(rec.trial_id, f"{rec.trial_id}-S{k:03d}",
                         int(patients[k]), float(theta_s[k]), duration)
        for k in range(n_sites) if theta_s[k] < duration
    ]
    latent = {"trial_id": rec.trial_id, "mode": "duration", "mu_bar": mu_bar,
              "theta_bar": theta_bar, "rate_shape": k_mu,
              "startup_shape": k_theta, "epsilon": eps,
              "target_month": target_month, "n_sites": n_sites}
    return rec, trial_sites, latent


_TOKEN_RE = re.compile(r"[a-z0-9]+")


@lru_cache(maxsize=4)
def _projection(buckets: int, dim: int, seed: int) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return gen.normal(0.0, 1.0, size=(buckets, dim)) / math.sqrt(dim)


def _embed_texts(texts, dim, buckets, projection_seed, noise_sigma, gen):
    proj = _projection(buckets, dim, projection_seed)
    matrix = np.empty((len(texts), dim), dtype=np.float32)
    for i, text in enumerate(texts):
        counts = Counter(zlib.crc32(tok.encode("utf-8")) % buckets
                         for tok in _TOKEN_RE.findall(text.lower()))
        idx = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
        val = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
        norm = math.sqrt(float((val * val).sum())) or 1.0
        row = (val / norm) @ proj[idx]
        if noise_sigma > 0:
            row = row + gen.normal(0.0, noise_sigma, size=dim)
        matrix[i] = row.astype(np.float32)
    return matrix


def save_latents(path, latents) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lat in latents:
            fh.write(json.dumps(lat) + "\n")


def load_latents(path) -> list:
    return [raw for _, raw in _read_jsonl(path)]
