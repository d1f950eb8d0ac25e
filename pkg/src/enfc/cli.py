"""Command-line surface for the forecasting pipeline.

One binary with subcommands: datagen, encode, train, predict, interval,
simulate, fit-baseline, evaluate, calibrate.  Every run writes its fully
resolved configuration next to its outputs (``run_config.json`` inside
directory outputs, ``<out>.config.json`` beside file outputs), and all
randomness is controlled by --seed, so reruns with identical inputs
produce byte-identical artifacts.

Options may also come from a config file passed with --config.  The file
holds one ``key = value`` pair per line; ``#`` starts a comment, blank
lines are skipped, values may be quoted, and keys are the long flag names
(hyphens and underscores are interchangeable).  Explicit flags win over
the file; the file wins over built-in defaults.  No sections, no nesting.

Exit codes: 0 success, 2 usage errors (bad flags, bad values, wrong
checkpoint kind), 3 data errors (missing or malformed inputs), 4 numeric
failures.  The ENFC_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, filterfit, pgsim
from . import models as md
from .encoding import (EncodedTrial, MultiLabelVocab, OovCounter, ZScoreState,
                       encode_trial, fit_categorical, fit_zscore)
from .errors import (DataError, DomainError, InsufficientDataError,
                     NumericError, StructuralError, UsageError)
from .evalmetrics import (DEFAULT_SIGNIFICANCES, PairedOutcomes,
                          calibration_csv, calibration_sweep, metrics_report)

logger = logging.getLogger("enfc.cli")

MODEL_HEADS = {"deterministic": "deterministic",
               "stochastic": "gamma",
               "poisson-gamma": "poisson-gamma"}
SPLIT_NAMES = ("train", "dev", "test")
_ENCODED_ARRAYS = ("x_emb", "x_cat", "x_num", "y_enroll", "y_duration",
                   "site_rates", "site_startups", "site_offsets")


@dataclass(frozen=True)
class RunConfig:
    """A subcommand plus its fully resolved options."""

    subcommand: str
    options: dict

    def to_json_dict(self) -> dict:
        return {"subcommand": self.subcommand,
                "options": {k: self.options[k] for k in sorted(self.options)}}


@dataclass(frozen=True)
class _Opt:
    flag: str
    convert: object
    default: object = None
    help: str = ""
    required: bool = False
    choices: tuple | None = None

    @property
    def dest(self) -> str:
        return self.flag.replace("-", "_")


def _csv_ints(text: str) -> tuple:
    return tuple(int(part) for part in str(text).split(","))


def _csv_floats(text: str) -> tuple:
    return tuple(float(part) for part in str(text).split(","))


def _csv_names(text: str) -> tuple:
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


_SEED = _Opt("seed", int, 0, "random seed controlling all stochastic steps")
_CONFIG = _Opt("config", str, None, "key=value config file merged under explicit flags (default: none)")
_MODEL_PATH = _Opt("model-path", str, required=True, help="trained checkpoint file")
_ENCODED_IN = _Opt("in", str, required=True, help="encode output directory")
_DATA_IN = _Opt("in", str, required=True,
                help="data directory with trials.jsonl, sites.jsonl, embeddings.bin")
_SPLIT = _Opt("split", str, "test", "records to score", choices=("train", "dev", "test", "all"))
_REPLICATIONS = _Opt("replications", int, 1024, "Monte Carlo replications per trial")
_CAP = _Opt("cap-months", float, 72.0, "censoring horizon for simulated durations")
_IDS = _Opt("ids", _csv_names, None, "comma-separated trial ids (default: every trial)")

_SUBCOMMANDS = {
    "datagen": ("generate a synthetic corpus: trials, sites, embeddings, latents", (
        _Opt("trials", int, required=True, help="number of trials to generate"),
        _Opt("out", str, required=True, help="output directory"),
        _Opt("mode", str, "study", "outcome style", choices=("study", "duration")),
        _Opt("embedding-dim", int, 64, "synthetic embedding width"),
        _Opt("embedding-noise", float, None, "extra Gaussian sigma on embeddings (default: none)"),
        _Opt("id-prefix", str, "TRL", "trial id prefix"),
        _SEED, _CONFIG)),
    "encode": ("split the corpus and encode every trial into model inputs", (
        _DATA_IN,
        _Opt("out", str, required=True, help="output directory"),
        _Opt("split-sizes", _csv_ints, None,
             "train,dev,test record counts (default: 80/10/10 of the corpus)"),
        _SEED, _CONFIG)),
    "train": ("train a model on an encoded dataset", (
        _ENCODED_IN,
        _Opt("out", str, required=True, help="checkpoint file to write"),
        _Opt("model", str, required=True, help="model kind",
             choices=tuple(MODEL_HEADS)),
        _Opt("epochs", int, None, "epoch budget (default: model preset)"),
        _Opt("batch-size", int, None, "minibatch size (default: model preset)"),
        _Opt("patience", int, None, "early-stop patience (default: model preset)"),
        _Opt("branch-lr", float, None, "input-branch learning rate (default: model preset)"),
        _Opt("body-lr", float, None, "body learning rate (default: model preset)"),
        _Opt("optimizer", str, None, "optimizer (default: model preset)",
             choices=("adamw", "rmsprop")),
        _Opt("hidden", int, 64, "shared representation width"),
        _Opt("heads", int, 4, "attention heads"),
        _Opt("dropout", float, 0.3, "categorical-branch dropout"),
        _SEED, _CONFIG)),
    "predict": ("point predictions (study heads) or site parameters (poisson-gamma)", (
        _MODEL_PATH, _ENCODED_IN,
        _Opt("out", str, required=True, help="JSONL predictions file"),
        _SPLIT, _CONFIG)),
    "interval": ("equal-tailed prediction intervals from a stochastic checkpoint", (
        _MODEL_PATH, _ENCODED_IN,
        _Opt("out", str, required=True, help="JSONL intervals file"),
        _Opt("significance", float, 0.1, "two-sided miss probability"),
        _SPLIT, _CONFIG)),
    "simulate": ("Monte Carlo duration forecasts from a poisson-gamma checkpoint", (
        _MODEL_PATH, _DATA_IN,
        _Opt("out", str, required=True, help="JSONL forecasts file"),
        _IDS, _REPLICATIONS, _CAP, _SEED, _CONFIG)),
    "fit-baseline": ("filter-and-fit duration forecasts straight from the corpus", (
        _DATA_IN,
        _Opt("out", str, required=True, help="JSONL forecasts file"),
        _IDS,
        _Opt("min-samples", int, 30, "pooled site samples required per query"),
        _Opt("features", _csv_names, filterfit.SIMILARITY_FEATURES,
             "similarity features that must all overlap"),
        _Opt("fit-epochs", int, 512, "gradient-fit epoch budget"),
        _REPLICATIONS, _CAP, _SEED, _CONFIG)),
    "evaluate": ("score a study-level checkpoint: errors, R2, coverage", (
        _MODEL_PATH, _ENCODED_IN,
        _Opt("out", str, required=True, help="metrics JSON file"),
        _Opt("window-months", float, 6.0, "coverage window width"),
        _Opt("significance", float, 0.1,
             "interval significance (stochastic checkpoints only)"),
        _SPLIT, _CONFIG)),
    "calibrate": ("interval accuracy and width across significance levels", (
        _MODEL_PATH, _ENCODED_IN,
        _Opt("out", str, required=True, help="calibration CSV file"),
        _Opt("significances", _csv_floats, DEFAULT_SIGNIFICANCES,
             "comma-separated significance levels"),
        _SPLIT, _CONFIG)),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enfc", description="Clinical-trial enrollment forecasting pipeline.")
    subparsers = parser.add_subparsers(dest="subcommand", required=True,
                                       metavar="subcommand")
    for name, (summary, opts) in _SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=summary, description=summary)
        for opt in opts:
            # None-default options explain their fallback in the help text
            text = opt.help
            if opt.required:
                text += " (required)"
            elif opt.default is not None:
                text += f" (default: {_show(opt.default)})"
            kwargs = dict(default=argparse.SUPPRESS, help=text, dest=opt.dest)
            if opt.choices:
                kwargs["choices"] = opt.choices
            else:
                kwargs["type"] = opt.convert
            sub.add_argument(f"--{opt.flag}", **kwargs)
    return parser


def _show(default) -> str:
    if isinstance(default, tuple):
        return ",".join(str(v) for v in default)
    return str(default)


def _parse_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing config file: {path}")
    entries = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        entries[key] = value
    return entries


def _resolve(name: str, namespace, file_entries: dict) -> RunConfig:
    options, pending = {}, dict(file_entries)
    for opt in _SUBCOMMANDS[name][1]:
        if hasattr(namespace, opt.dest):
            options[opt.dest] = getattr(namespace, opt.dest)
        elif opt.dest in pending:
            raw = pending.pop(opt.dest)
            try:
                value = opt.convert(raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config {opt.flag} = {raw!r}: {exc}") from exc
            if opt.choices and value not in opt.choices:
                raise UsageError(
                    f"config {opt.flag} = {raw!r}: expected one of {opt.choices}")
            options[opt.dest] = value
        elif opt.required:
            raise UsageError(f"{name}: missing required --{opt.flag}")
        else:
            options[opt.dest] = opt.default
        pending.pop(opt.dest, None)
    if pending:
        raise UsageError(f"unknown config keys for {name}: "
                         + ", ".join(sorted(pending)))
    return RunConfig(subcommand=name, options=options)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_json(path, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True,
                                 default=_json_default) + "\n")


def _write_jsonl(path, records) -> None:
    _write_text(path, "".join(
        json.dumps(record, sort_keys=True, default=_json_default) + "\n"
        for record in records))


def _record_config(cfg: RunConfig, out, directory: bool) -> None:
    target = Path(out) / "run_config.json" if directory else Path(f"{out}.config.json")
    _write_json(target, cfg.to_json_dict())


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing input file: {path}")
    return path


def _load_corpus(in_dir, need_sites: bool = True):
    base = Path(in_dir)
    trials = dataio.load_trials(_require(base / "trials.jsonl"))
    sites = dataio.load_sites(base / "sites.jsonl") if need_sites else []
    ids, matrix = dataio.load_embeddings(_require(base / "embeddings.bin"))
    return trials, sites, dict(zip(ids, matrix))


def _pick_trials(trials, ids):
    if ids is None:
        return list(trials)
    by_id = {t.trial_id: t for t in trials}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError("unknown trial ids: " + ", ".join(missing))
    return [by_id[i] for i in ids]


def _embedding_row(rows: dict, trial_id: str):
    if trial_id not in rows:
        raise DataError(f"no embedding for trial {trial_id}")
    return rows[trial_id]


def _cmd_datagen(cfg: RunConfig) -> None:
    o = cfg.options
    gen_cfg = dataio.GeneratorConfig(
        n_trials=o["trials"], mode=o["mode"], id_prefix=o["id_prefix"],
        embedding_dim=o["embedding_dim"], embedding_noise=o["embedding_noise"])
    data = dataio.generate_synthetic(gen_cfg, seed=o["seed"])
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_trials(out / "trials.jsonl", data.trials)
    dataio.save_sites(out / "sites.jsonl", data.sites)
    dataio.save_embeddings(out / "embeddings.bin", data.embedding_ids,
                           data.embeddings)
    dataio.save_latents(out / "latents.jsonl", data.latents)
    _record_config(cfg, out, directory=True)
    logger.info("datagen: %d trials, %d site rows", len(data.trials),
                len(data.sites))


def _default_split_sizes(n: int) -> tuple:
    dev = test = max(n // 10, 1)
    return (n - dev - test, dev, test)


def _cmd_encode(cfg: RunConfig) -> None:
    o = cfg.options
    trials, sites, rows = _load_corpus(o["in"])
    sizes = o["split_sizes"] or _default_split_sizes(len(trials))
    parts = dataio.split_dataset(trials, sizes, o["seed"])
    vocab = fit_categorical(parts[0])
    zscore = fit_zscore(parts[0])
    oov = OovCounter()

    ordered, labels = [], []
    for label, part in zip(SPLIT_NAMES, parts):
        ordered.extend(part)
        labels.extend([label] * len(part))
    encoded = [encode_trial(vocab, zscore, t, _embedding_row(rows, t.trial_id), oov)
               for t in ordered]

    by_trial = dataio.sites_by_trial(sites)
    rates, startups, offsets = [], [], [0]
    for t in ordered:
        for site in by_trial.get(t.trial_id, []):
            rates.append(site.rate)
            startups.append(site.startup_months)
        offsets.append(len(rates))

    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "x_emb": np.stack([e.x_emb for e in encoded]),
        "x_cat": np.stack([e.x_cat for e in encoded]),
        "x_num": np.stack([e.x_num for e in encoded]),
        "y_enroll": np.array([np.nan if t.actual_enrollment is None
                              else float(t.actual_enrollment) for t in ordered]),
        "y_duration": np.array([np.nan if t.duration_months is None
                                else float(t.duration_months) for t in ordered]),
        "site_rates": np.array(rates, dtype=np.float64),
        "site_startups": np.array(startups, dtype=np.float64),
        "site_offsets": np.array(offsets, dtype=np.int64),
    }
    for name in _ENCODED_ARRAYS:
        np.save(out / f"{name}.npy", arrays[name])
    meta = {
        "ids": [t.trial_id for t in ordered],
        "splits": labels,
        "vocab": {"features": list(vocab.features),
                  "labels": [list(ls) for ls in vocab.labels]},
        "zscore": {"features": list(zscore.features),
                   "means": list(zscore.means), "stds": list(zscore.stds)},
        "oov": {"total": oov.total,
                "by_feature": {k: oov.by_feature[k]
                               for k in sorted(oov.by_feature)}},
    }
    _write_json(out / "meta.json", meta)
    _record_config(cfg, out, directory=True)
    logger.info("encode: %d records (%s)", len(ordered),
                "/".join(str(s) for s in sizes))


@dataclass(frozen=True)
class _EncodedDataset:
    ids: list
    splits: list
    trials: list
    y_enroll: np.ndarray
    y_duration: np.ndarray
    site_rates: np.ndarray
    site_startups: np.ndarray
    site_offsets: np.ndarray
    vocab: MultiLabelVocab
    zscore: ZScoreState

    def select(self, which: str) -> list:
        idx = (list(range(len(self.ids))) if which == "all"
               else [i for i, s in enumerate(self.splits) if s == which])
        if not idx:
            raise InsufficientDataError(f"no records in split {which!r}")
        return idx

    def sites_for(self, i: int) -> tuple:
        lo, hi = self.site_offsets[i], self.site_offsets[i + 1]
        return self.site_rates[lo:hi], self.site_startups[lo:hi]


def _load_encoded(in_dir) -> _EncodedDataset:
    base = Path(in_dir)
    meta = json.loads(_require(base / "meta.json").read_text(encoding="utf-8"))
    if not meta["ids"]:
        raise InsufficientDataError(f"encoded dataset at {base} is empty")
    arrays = {name: np.load(_require(base / f"{name}.npy"))
              for name in _ENCODED_ARRAYS}
    trials = [EncodedTrial(x_emb=arrays["x_emb"][i], x_cat=arrays["x_cat"][i],
                           x_num=arrays["x_num"][i])
              for i in range(len(meta["ids"]))]
    vocab = MultiLabelVocab(tuple(meta["vocab"]["features"]),
                            tuple(tuple(ls) for ls in meta["vocab"]["labels"]))
    zscore = ZScoreState(tuple(meta["zscore"]["features"]),
                         tuple(meta["zscore"]["means"]),
                         tuple(meta["zscore"]["stds"]))
    return _EncodedDataset(ids=meta["ids"], splits=meta["splits"], trials=trials,
                           y_enroll=arrays["y_enroll"],
                           y_duration=arrays["y_duration"],
                           site_rates=arrays["site_rates"],
                           site_startups=arrays["site_startups"],
                           site_offsets=arrays["site_offsets"],
                           vocab=vocab, zscore=zscore)


def _study_pairs(data: _EncodedDataset, which: str) -> tuple:
    pairs = [(data.trials[i], float(data.y_enroll[i]))
             for i in data.select(which) if np.isfinite(data.y_enroll[i])]
    if not pairs:
        raise InsufficientDataError(f"no enrollment outcomes in split {which!r}")
    return tuple(pairs)


def _site_pairs(data: _EncodedDataset, which: str) -> tuple:
    pairs = []
    for i in data.select(which):
        rates, startups = data.sites_for(i)
        if rates.size:
            pairs.append((data.trials[i], (rates, startups)))
    if not pairs:
        raise InsufficientDataError(f"no site outcomes in split {which!r}")
    return tuple(pairs)


def _cmd_train(cfg: RunConfig) -> None:
    o = cfg.options
    data = _load_encoded(o["in"])
    head = MODEL_HEADS[o["model"]]
    overrides = {key: o[flag] for flag, key in (
        ("epochs", "max_epochs"), ("batch_size", "batch_size"),
        ("patience", "patience"), ("branch_lr", "branch_lr"),
        ("body_lr", "body_lr"), ("optimizer", "optimizer"),
    ) if o[flag] is not None}
    preset = (md.pg_train_config if head == "poisson-gamma"
              else md.study_train_config)
    train_cfg = preset(seed=o["seed"], **overrides)
    pairs = _site_pairs if head == "poisson-gamma" else _study_pairs
    backbone = md.BackboneConfig(
        d_emb=data.trials[0].x_emb.size, d_cat=data.trials[0].x_cat.size,
        d_num=data.trials[0].x_num.size, hidden=o["hidden"], heads=o["heads"],
        dropout=o["dropout"])
    checkpoint = md.train(head, md.TrainingData(
        train=pairs(data, "train"), dev=pairs(data, "dev"),
        vocab=data.vocab, zscore=data.zscore, backbone=backbone), train_cfg)
    md.save_checkpoint(o["out"], checkpoint)
    _record_config(cfg, o["out"], directory=False)
    logger.info("train: wrote %s checkpoint to %s", head, o["out"])


def _cmd_predict(cfg: RunConfig) -> None:
    o = cfg.options
    checkpoint = md.load_checkpoint(_require(o["model_path"]))
    data = _load_encoded(o["in"])
    idx = data.select(o["split"])
    if checkpoint.head_kind == "poisson-gamma":
        records = []
        for i in idx:
            params = md.predict_site_params(checkpoint, data.trials[i])
            records.append({
                "trial_id": data.ids[i],
                "rate_dist": {"shape": params.rate_dist.shape,
                              "rate": params.rate_dist.rate},
                "startup_dist": {"shape": params.startup_dist.shape,
                                 "rate": params.startup_dist.rate}})
    else:
        points = md.point_estimates(checkpoint, [data.trials[i] for i in idx])
        records = [{"trial_id": data.ids[i], "prediction": float(p)}
                   for i, p in zip(idx, points)]
    _write_jsonl(o["out"], records)
    _record_config(cfg, o["out"], directory=False)


def _cmd_interval(cfg: RunConfig) -> None:
    o = cfg.options
    checkpoint = md.load_checkpoint(_require(o["model_path"]))
    data = _load_encoded(o["in"])
    records = []
    for i in data.select(o["split"]):
        interval = md.predict_interval(checkpoint, data.trials[i],
                                       o["significance"])
        records.append({"trial_id": data.ids[i], "lower": interval.lower,
                        "upper": interval.upper, "level": interval.level})
    _write_jsonl(o["out"], records)
    _record_config(cfg, o["out"], directory=False)


def _cmd_simulate(cfg: RunConfig) -> None:
    o = cfg.options
    checkpoint = md.load_checkpoint(_require(o["model_path"]))
    trials, _, rows = _load_corpus(o["in"], need_sites=False)
    records = []
    for i, trial in enumerate(_pick_trials(trials, o["ids"])):
        summary = pgsim.predict_trial_duration(
            checkpoint, trial, _embedding_row(rows, trial.trial_id),
            replications=o["replications"], seed=o["seed"] + i,
            cap_months=o["cap_months"])
        records.append(summary.to_json_dict(trial.trial_id))
    _write_jsonl(o["out"], records)
    _record_config(cfg, o["out"], directory=False)


def _cmd_fit_baseline(cfg: RunConfig) -> None:
    o = cfg.options
    trials, sites, _ = _load_corpus(o["in"])
    fit_cfg = filterfit.FitConfig(epochs=o["fit_epochs"], seed=o["seed"])
    records = []
    for i, query in enumerate(_pick_trials(trials, o["ids"])):
        try:
            forecast = filterfit.predict_duration_filterfit(
                query, trials, sites, replications=o["replications"],
                seed=o["seed"] + i, min_samples=o["min_samples"],
                fit_config=fit_cfg, features=o["features"],
                cap_months=o["cap_months"])
        except InsufficientDataError as exc:
            logger.warning("fit-baseline: %s", exc)
            records.append({"trial_id": query.trial_id, "error": str(exc)})
            continue
        records.append(forecast.to_json_dict(query.trial_id))
    _write_jsonl(o["out"], records)
    _record_config(cfg, o["out"], directory=False)


def _scoring_rows(data: _EncodedDataset, which: str) -> tuple:
    idx = [i for i in data.select(which) if np.isfinite(data.y_enroll[i])]
    if not idx:
        raise InsufficientDataError(f"no enrollment outcomes in split {which!r}")
    return idx, data.y_enroll[idx]


def _cmd_evaluate(cfg: RunConfig) -> None:
    o = cfg.options
    checkpoint = md.load_checkpoint(_require(o["model_path"]))
    if checkpoint.head_kind == "poisson-gamma":
        raise UsageError("evaluate needs a study-level checkpoint "
                         "(deterministic or stochastic)")
    data = _load_encoded(o["in"])
    idx, truths = _scoring_rows(data, o["split"])
    trials = [data.trials[i] for i in idx]
    predictions = md.point_estimates(checkpoint, trials)
    intervals = None
    if checkpoint.head_kind == "gamma":
        intervals = [md.predict_interval(checkpoint, t, o["significance"])
                     for t in trials]
    report = metrics_report(PairedOutcomes(truths, predictions, intervals),
                            window_months=o["window_months"])
    _write_json(o["out"], report)
    _record_config(cfg, o["out"], directory=False)


def _cmd_calibrate(cfg: RunConfig) -> None:
    o = cfg.options
    checkpoint = md.load_checkpoint(_require(o["model_path"]))
    data = _load_encoded(o["in"])
    idx, truths = _scoring_rows(data, o["split"])
    rows = calibration_sweep(checkpoint, [data.trials[i] for i in idx], truths,
                             significances=o["significances"])
    _write_text(o["out"], calibration_csv(rows))
    _record_config(cfg, o["out"], directory=False)


_HANDLERS = {
    "datagen": _cmd_datagen,
    "encode": _cmd_encode,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "interval": _cmd_interval,
    "simulate": _cmd_simulate,
    "fit-baseline": _cmd_fit_baseline,
    "evaluate": _cmd_evaluate,
    "calibrate": _cmd_calibrate,
}


def _configure_logging() -> None:
    name = os.environ.get("ENFC_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def run(argv) -> int:
    """Execute one subcommand; returns the process exit code."""
    _configure_logging()
    parser = build_parser()
    try:
        namespace = parser.parse_args(list(argv))
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    name = namespace.subcommand
    try:
        file_entries = {}
        if getattr(namespace, "config", None):
            file_entries = _parse_config_file(namespace.config)
        cfg = _resolve(name, namespace, file_entries)
        _HANDLERS[name](cfg)
        return 0
    except (UsageError, DomainError) as exc:
        print(f"enfc {name}: usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, StructuralError, OSError) as exc:
        print(f"enfc {name}: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"enfc {name}: numeric error: {exc}", file=sys.stderr)
        return 4


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
