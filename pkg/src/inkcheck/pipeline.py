"""Run configuration and the on-disk pipeline stages behind the CLI.

Layout under ``output_dir``::

    data/{hwr-train,hwr-val,train,val}/       manifest.jsonl + images/
    data/test/<scenario>-s<severity>/         one directory per test set
    logs/{hwr,classifier}.jsonl               one record per epoch
    scores/<scenario>-s<severity>.jsonl       per-example scores and transcriptions
    reports/                                  calibration.json, report.json/.csv, summary.csv, SVGs
    run.ini                                   resolved settings of the latest CLI command

Checkpoints go to ``checkpoint_dir`` (``output_dir/checkpoints`` by default).
Every stage is a pure function of the configuration and the files written by
earlier stages, so reruns with the same seed reproduce identical bytes.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import shutil
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import HeadSchedule, MisspellingClassifier, encode_texts, head_config_for, train_classifier
from .evaluation import (SCENARIOS, EvalReport, build_test_set, calibrate, evaluate_scores, pr_curve, scenario,
                         summarize, write_reports)
from .hwr import HwrConfig, HwrSchedule, Recognizer, train_hwr
from .renderer import random_style_renderer
from .textgen import build_dataset, load_dataset, load_wordlist, sample_words, save_dataset

log = logging.getLogger(__name__)

SPLITS = ("hwr-train", "hwr-val", "train", "val", "test")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


DEFAULTS: dict[str, dict[str, object]] = {
    "run": {"seed": None},
    "paths": {"wordlist": "", "output_dir": "inkcheck-run", "checkpoint_dir": ""},
    "data": {
        "hwr_train_count": 4000,
        "hwr_val_count": 500,
        "train_count": 8000,
        "val_count": 1000,
        "test_count": 1500,
        "incorrect_fraction": 0.5,
        "train_severity": 1,
    },
    "hwr": {
        "height": 32,
        "width": 256,
        "conv_filters": (8, 16),
        "pools": ((2, 2), (2, 4)),
        "recurrent_hidden": 32,
        "cell": "gru",
        "epochs": 7,
        "batch_size": 16,
        "learning_rate": 4e-3,
        "final_learning_rate": 5e-4,
        "patience": 3,
        "clip_norm": 5.0,
    },
    "head": {
        "conv_filters": (8, 8, 16, 16),
        "dropout_rate": 0.1,
        "epochs": 12,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "final_learning_rate": 4e-5,
        "patience": 8,
    },
    "evaluate": {"min_recall": 0.99, "scenarios": ("moderate", "difficult"), "severities": (1, 2, 3)},
}


def _parse(value: str, default, key: str):
    value = value.strip()
    try:
        if key == "pools":
            return tuple(tuple(int(v) for v in p.split("x")) for p in value.split(","))
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v.strip()) for v in value.split(",") if v.strip())
        if default is None:
            return int(value)
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes", "on")
        return type(default)(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={value!r}: {exc}") from None


def _format(value) -> str:
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ",".join("x".join(str(v) for v in p) for p in value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]] = field(
        default_factory=lambda: {s: dict(v) for s, v in DEFAULTS.items()}
    )

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, str] | None = None) -> "RunConfig":
        """Defaults, then the INI-style file, then ``section.key`` overrides."""
        cfg = cls()
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file {path} does not exist")
            parser = configparser.ConfigParser()
            parser.read(path, encoding="utf-8")
            for section in parser.sections():
                for key, value in parser.items(section):
                    cfg.set(f"{section}.{key}", value)
        for dotted, value in (overrides or {}).items():
            cfg.set(dotted, value)
        return cfg

    def set(self, dotted: str, value: str) -> None:
        section, _, key = dotted.partition(".")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown setting {dotted!r}")
        self.values[section][key] = _parse(str(value), DEFAULTS[section][key], key)

    def get(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.values[section][key]

    def dump(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_format(v)}" for k, v in items.items())
            lines.append("")
        return "\n".join(lines)

    # -- derived views ----------------------------------------------------------
    @property
    def seed(self) -> int:
        seed = self.get("run.seed")
        if seed is None:
            raise ConfigError("a seed is required (run.seed or --seed)")
        return int(seed)

    @property
    def output_dir(self) -> Path:
        return Path(self.get("paths.output_dir"))

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.get("paths.checkpoint_dir") or self.output_dir / "checkpoints")

    def wordlist(self) -> list[str]:
        path = self.get("paths.wordlist")
        if path and not Path(path).exists():
            raise ConfigError(f"wordlist {path} does not exist")
        words = load_wordlist(path or None)
        too_long = [w for w in words if len(w) > self.hwr_config().time_steps]
        if too_long:
            raise ConfigError(f"{len(too_long)} words exceed {self.hwr_config().time_steps} characters")
        return words

    def hwr_config(self) -> HwrConfig:
        h = self.values["hwr"]
        return HwrConfig(height=h["height"], width=h["width"], conv_filters=h["conv_filters"],
                         pools=h["pools"], recurrent_hidden=h["recurrent_hidden"], cell=h["cell"])

    def hwr_schedule(self) -> HwrSchedule:
        h = self.values["hwr"]
        return HwrSchedule(epochs=h["epochs"], batch_size=h["batch_size"], learning_rate=h["learning_rate"],
                           final_learning_rate=h["final_learning_rate"], patience=h["patience"],
                           clip_norm=h["clip_norm"], seed=derive_seed(self.seed, "hwr"))

    def head_overrides(self) -> dict:
        h = self.values["head"]
        return {"conv_filters": h["conv_filters"], "dropout_rate": h["dropout_rate"]}

    def head_schedule(self) -> HeadSchedule:
        h = self.values["head"]
        return HeadSchedule(epochs=h["epochs"], batch_size=h["batch_size"], learning_rate=h["learning_rate"],
                            final_learning_rate=h["final_learning_rate"], patience=h["patience"],
                            seed=derive_seed(self.seed, "head"))


def derive_seed(seed: int, name: str) -> int:
    """A stable per-purpose seed (no dependence on Python's salted ``hash``)."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# stages


def _reset_dir(path: Path) -> None:
    """Clear a dataset directory this pipeline wrote earlier; refuse anything else."""
    if path.exists():
        if not (path / "manifest.jsonl").exists():
            raise ConfigError(f"{path} exists and is not a dataset directory; refusing to overwrite")
        shutil.rmtree(path)


def test_set_name(name: str, severity: int) -> str:
    return f"{name}-s{severity}"


def gen_data(cfg: RunConfig, split: str, scenario_name: str | None = None, severity: int | None = None,
             count: int | None = None) -> list[Path]:
    """Render one split (or, for ``test``, the selected scenario × severity sets)."""
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; choose from {', '.join(SPLITS)}")
    words = cfg.wordlist()
    renderer = random_style_renderer(cfg.get("hwr.height"), cfg.get("hwr.width"))
    data = cfg.output_dir / "data"
    written = []
    if split != "test":
        key = split.replace("-", "_") + "_count"
        n = count if count is not None else cfg.get(f"data.{key}")
        fraction = 0.0 if split.startswith("hwr") else cfg.get("data.incorrect_fraction")
        seed = derive_seed(cfg.seed, split)
        picked = sample_words(words, n, np.random.default_rng([seed, 0]))
        manifest = build_dataset(picked, fraction, cfg.get("data.train_severity"), renderer, seed)
        out = data / split
        _reset_dir(out)
        save_dataset(manifest, out)
        log.info("%s: %d examples, %.1f%% misspelled -> %s", split, len(manifest), 100 * manifest.balance, out)
        return [out]

    names = [scenario_name] if scenario_name else list(cfg.get("evaluate.scenarios"))
    levels = [severity] if severity else list(cfg.get("evaluate.severities"))
    for name in names:
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}")
    n = count if count is not None else cfg.get("data.test_count")
    seed = derive_seed(cfg.seed, "test")
    cache: dict = {}
    for name in names:
        for level in levels:
            spec = scenario(name, level)
            manifest = build_test_set(spec, n, words, renderer, seed, cache)
            out = data / "test" / test_set_name(name, level)
            _reset_dir(out)
            save_dataset(manifest, out)
            m = sum(e.incorrect for e in manifest)
            (out / "set.json").write_text(json.dumps(
                {"scenario": name, "severity": level, "count": n, "misspelled": m, "seed": seed},
                sort_keys=True) + "\n", encoding="utf-8")
            log.info("test %s severity %d: M=%d, C=%d -> %s", name, level, m, n - m, out)
            written.append(out)
    return written


def _load_split(cfg: RunConfig, split: str):
    path = cfg.output_dir / "data" / split
    if not (path / "manifest.jsonl").exists():
        raise FileNotFoundError(f"dataset {path} is missing; run gen-data --split {split} first")
    return load_dataset(path)


def _epoch_logger(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")

    def write(record: dict) -> None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.info("epoch %d: %s", record["epoch"],
                 ", ".join(f"{k}={v:.4g}" for k, v in record.items() if k != "epoch"))
    return write


def hwr_checkpoint(cfg: RunConfig) -> Path:
    return cfg.checkpoint_dir / "hwr.ckpt"


def classifier_checkpoint(cfg: RunConfig) -> Path:
    return cfg.checkpoint_dir / "classifier.ckpt"


def train_hwr_stage(cfg: RunConfig) -> Path:
    train, val = _load_split(cfg, "hwr-train"), _load_split(cfg, "hwr-val")
    result = train_hwr(train, val, cfg.hwr_config(), cfg.hwr_schedule(),
                       on_epoch=_epoch_logger(cfg.output_dir / "logs" / "hwr.jsonl"))
    path = hwr_checkpoint(cfg)
    best = result.history[result.best_epoch]
    result.model.save(path, {"best_epoch": result.best_epoch, "skipped": result.skipped,
                             "val_cer": best["val_cer"], "val_word_accuracy": best["val_word_accuracy"]})
    log.info("recognizer: best epoch %d, validation word accuracy %.3f -> %s",
             result.best_epoch, best["val_word_accuracy"], path)
    return path


def load_extractor(cfg: RunConfig) -> Recognizer:
    path = hwr_checkpoint(cfg)
    if not path.exists():
        raise FileNotFoundError(f"recognizer checkpoint {path} is missing; run train-hwr first")
    return Recognizer.load(path, expected=cfg.hwr_config())


def train_classifier_stage(cfg: RunConfig) -> Path:
    extractor = load_extractor(cfg)
    train, val = _load_split(cfg, "train"), _load_split(cfg, "val")
    config = head_config_for(extractor, **cfg.head_overrides())
    result = train_classifier(train, val, extractor, cfg.head_schedule(), config,
                              on_epoch=_epoch_logger(cfg.output_dir / "logs" / "classifier.jsonl"))
    path = classifier_checkpoint(cfg)
    best = result.history[result.best_epoch]
    result.model.save(path, {"best_epoch": result.best_epoch, "val_loss": best["val_loss"],
                             "val_accuracy": best["val_accuracy"]})
    log.info("classifier: best epoch %d, validation accuracy %.3f -> %s",
             result.best_epoch, best["val_accuracy"], path)
    return path


def _test_sets(cfg: RunConfig) -> list[Path]:
    root = cfg.output_dir / "data" / "test"
    sets = sorted(p.parent for p in root.glob("*/set.json")) if root.exists() else []
    if not sets:
        raise FileNotFoundError(f"no test sets under {root}; run gen-data --split test first")
    return sets


def score_stage(cfg: RunConfig) -> list[Path]:
    """Classifier scores and recognizer transcriptions for every test set."""
    extractor = load_extractor(cfg)
    path = classifier_checkpoint(cfg)
    if not path.exists():
        raise FileNotFoundError(f"classifier checkpoint {path} is missing; run train-classifier first")
    head = MisspellingClassifier.load(path, extractor)
    out_dir = cfg.output_dir / "scores"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for directory in _test_sets(cfg):
        manifest = load_dataset(directory)
        features = extractor.extract(manifest.images())
        texts = [e.text for e in manifest]
        onehots = encode_texts(texts, extractor.config.alphabet, extractor.config.time_steps)
        scores = head.scores(features, onehots)
        predictions = extractor.read(features)
        rows = [
            {"index": i, "label": e.label, "score": float(s), "prediction": p, "text": e.text,
             "rendered_text": e.rendered_text, "severity": e.severity}
            for i, (e, s, p) in enumerate(zip(manifest, scores, predictions))
        ]
        out = out_dir / f"{directory.name}.jsonl"
        out.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")
        written.append(out)
        log.info("scored %s (%d examples)", directory.name, len(rows))
    return written


def _read_scores(cfg: RunConfig) -> dict[str, tuple[dict, list[dict]]]:
    out = {}
    for directory in _test_sets(cfg):
        path = cfg.output_dir / "scores" / f"{directory.name}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"scores {path} are missing; run evaluate first")
        meta = json.loads((directory / "set.json").read_text(encoding="utf-8"))
        rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        out[directory.name] = (meta, rows)
    return out


def calibrate_stage(cfg: RunConfig, min_recall: float | None = None) -> Path:
    """Pick a threshold per test set: highest precision with recall >= ``min_recall``."""
    min_recall = cfg.get("evaluate.min_recall") if min_recall is None else min_recall
    if not 0.0 < min_recall <= 1.0:
        raise ConfigError("min_recall must lie in (0, 1]")
    thresholds = {}
    for name, (_, rows) in _read_scores(cfg).items():
        curve = pr_curve([r["score"] for r in rows], [r["label"] for r in rows])
        thresholds[name] = calibrate(curve, min_recall)
    path = cfg.output_dir / "reports" / "calibration.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"min_recall": min_recall, "thresholds": thresholds}, indent=2, sort_keys=True)
                    + "\n", encoding="utf-8")
    log.info("calibrated %d test sets at recall >= %g", len(thresholds), min_recall)
    return path


def report_stage(cfg: RunConfig) -> list[EvalReport]:
    """Rebuild every report file from stored scores and the calibration."""
    path = cfg.output_dir / "reports" / "calibration.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} is missing; run calibrate first")
    calibration = json.loads(path.read_text(encoding="utf-8"))
    reports = []
    for name, (meta, rows) in _read_scores(cfg).items():
        spec = scenario(meta["scenario"], meta["severity"], calibration["min_recall"])
        reports.append(evaluate_scores(
            spec, [r["score"] for r in rows], [r["label"] for r in rows], [r["prediction"] for r in rows],
            [r["text"] for r in rows], [r["rendered_text"] for r in rows],
            threshold=calibration["thresholds"][name],
        ))
    reports.sort(key=lambda r: (r.scenario, r.severity))
    directory = cfg.output_dir / "reports"
    write_reports(reports, directory)
    write_summary(summarize(reports), directory / "summary.csv")
    for name, s in summarize(reports).items():
        log.info("%s: precision %.4f vs baseline %.4f (measured %.4f), improvement %+.1f%%",
                 name, s["precision"], s["baseline_precision"], s["baseline_measured_precision"],
                 100 * s["improvement"])
    return reports


def write_summary(summary: dict, path: Path) -> None:
    """The per-scenario baseline comparison table."""
    fields = ["scenario", "precision", "recall", "baseline_precision", "baseline_measured_precision",
              "baseline_recall", "improvement"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for name, s in summary.items():
            writer.writerow({"scenario": name, **{k: round(s[k], 6) for k in fields[1:]}})


def evaluate_stage(cfg: RunConfig, min_recall: float | None = None) -> list[EvalReport]:
    score_stage(cfg)
    calibrate_stage(cfg, min_recall)
    return report_stage(cfg)
