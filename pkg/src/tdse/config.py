"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments. Relative paths are resolved against
the config file's directory. Every key can be overridden from the
environment as ``TDSE_<KEY>`` with dots turned into underscores, e.g.
``TDSE_GA_POPULATION=10``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, MissingSource
from .extractors import MbcnnParams, ProviderParams, RnnErParams, ScMbcnnParams
from .ga import GaConfig
from .meta import Stage2Params

ENV_PREFIX = "TDSE_"


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _k(text):
    t = str(text).strip()
    return t if t == "auto" else int(t)


# key -> (parser, default, description)
SCHEMA: dict[str, tuple] = {
    # data sources
    "target": ("path", "data/target.csv", "OHLCV CSV of the index to predict"),
    "target_symbol": (str, "TARGET", "symbol of the target index (used by the Target branch)"),
    "global_dir": ("path", "data/global", "directory of <SYMBOL>.csv OHLCV files"),
    "branches": ("path", "data/branches.ini", "region branch assignment"),
    "industry": ("path", "data/industry.csv", "industry index levels, one column per industry"),
    "news_dir": ("path", "data/news", "directory of <provider>.tsv news files"),
    "lexicon_positive": ("path", "data/lexicon/positive.txt", "positive terms, one per line"),
    "lexicon_negative": ("path", "data/lexicon/negative.txt", "negative terms, one per line"),
    "stopwords": ("path", "data/lexicon/stopwords.txt", "stopwords, one per line"),
    "global_policy": (str, "ffill", "alignment of global indices: ffill or drop"),
    "idf": (str, "expanding", "TF-IDF document frequencies: expanding or corpus"),
    # windows and lags
    "n_windows": (int, 10, "number of sliding windows"),
    "train_months": (int, 11, "training months per window"),
    "test_months": (int, 3, "test months per window"),
    "extractor_fraction": (float, 0.8, "share of training days used by the Stage-1 extractors"),
    "global_lag": (int, 1, "lags of global returns"),
    "industry_lag": (int, 5, "lags of industry returns"),
    "news_lag": (int, 5, "steps of market + sentiment history assembled for the RNNs"),
    "tie_up": (_bool, False, "label a zero return as Up"),
    # fixed Stage-1 hyper-parameters (train mode)
    **{f"mbcnn.{f.name}": (type(f.default), f.default, "MBCNN") for f in fields(MbcnnParams)},
    **{f"sc.{f.name}": (_k if f.name == "k" else _bool if isinstance(f.default, bool) else type(f.default),
                        f.default, "SC-MBCNN") for f in fields(ScMbcnnParams)},
    **{f"rnn.{f.name}": (type(f.default), f.default, "RNN per provider") for f in fields(ProviderParams)},
    "rnn.lag": (int, 1, "RNN sequence length"),
    "rnn.batch": (int, 32, "RNN mini-batch size"),
    # fixed Stage-2 hyper-parameters (train mode)
    **{f"meta.{f.name}": (type(f.default), f.default, "Stage 2") for f in fields(Stage2Params)},
    # genetic search
    "ga.population": (int, 50, "Stage-2 GA population"),
    "ga.generations": (int, 20, "Stage-2 GA max generations"),
    "ga.stall": (int, 5, "Stage-2 GA max stalled generations"),
    "ga.selection_rate": (float, 0.3, "elite share"),
    "ga.crossover_rate": (float, 0.8, "crossover probability"),
    "ga.mutation_rate": (float, 0.05, "per-gene mutation probability"),
    "ga1.population": (int, 50, "Stage-1 GA population"),
    "ga1.generations": (int, 20, "Stage-1 GA max generations"),
    "ga1.stall": (int, 5, "Stage-1 GA max stalled generations"),
    "holdout_windows": (int, 1, "trailing windows excluded from the Stage-2 fitness"),
    # run
    "seed": (int, 0, "master seed"),
    "workers": (int, 1, "worker processes"),
    "out": ("path", "out", "output directory"),
    # backtest
    "signals": (str, "", "optional signal CSV (date,signal) overriding model predictions"),
    "random_seed": (int, -1, "seed of the Random strategy (-1: derived from seed)"),
    "sharpe_basis": (str, "monthly", "Sharpe on monthly or daily returns"),
}


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


_ENV_KEYS = {env_name(k): k for k in SCHEMA}
assert len(_ENV_KEYS) == len(SCHEMA), "config keys collide after env-name mapping"


class RunConfig:
    """Typed view over the resolved key/value pairs."""

    def __init__(self, values: Mapping[str, Any], base_dir: Path | str = "."):
        self.base_dir = Path(base_dir)
        self.values: dict[str, Any] = {}
        for key, (parser, default, _) in SCHEMA.items():
            raw = values.get(key, default)
            try:
                self.values[key] = raw if parser == "path" else (parser(raw) if raw is not None else None)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        unknown = sorted(set(values) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")

    def __getitem__(self, key: str):
        return self.values[key]

    def path(self, key: str) -> Path:
        p = Path(str(self.values[key]))
        return p if p.is_absolute() else self.base_dir / p

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, Any] | None = None,
             environ: Mapping[str, str] | None = None) -> "RunConfig":
        values: dict[str, Any] = {}
        base = Path(".")
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise MissingSource(f"config file not found: {path}")
            parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), delimiters=("=",))
            parser.optionxform = str
            try:
                parser.read_string("[run]\n" + path.read_text(encoding="utf-8"), source=str(path))
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            values.update(parser["run"])
            base = path.parent
        env = os.environ if environ is None else environ
        for name, key in _ENV_KEYS.items():
            if name in env:
                values[key] = env[name]
        for k, v in (overrides or {}).items():
            if v is not None:
                values[k] = v
        return cls(values, base)

    def check_paths(self, keys) -> None:
        for k in keys:
            if not self.path(k).exists():
                raise MissingSource(f"{k}: missing file or directory {self.path(k)}")

    def dump(self, exclude=()) -> str:
        """Resolved configuration as text (paths as given, not resolved)."""
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values) if k not in exclude)

    # typed views ---------------------------------------------------------

    def _section(self, prefix: str, cls, **extra):
        vals = {f.name: self.values[f"{prefix}.{f.name}"] for f in fields(cls) if f"{prefix}.{f.name}" in self.values}
        vals.update(extra)
        return cls(**vals)

    def mbcnn_params(self) -> MbcnnParams:
        return self._section("mbcnn", MbcnnParams)

    def sc_params(self) -> ScMbcnnParams:
        return self._section("sc", ScMbcnnParams)

    def rnn_params(self, providers) -> RnnErParams:
        pp = self._section("rnn", ProviderParams)
        return RnnErParams(providers=tuple((p, pp) for p in providers), lag=self.values["rnn.lag"],
                           batch=self.values["rnn.batch"])

    def stage2_params(self) -> Stage2Params:
        return self._section("meta", Stage2Params)

    def ga_config(self, stage: int = 2, seed: int | None = None) -> GaConfig:
        p = "ga" if stage == 2 else "ga1"
        return GaConfig(
            population=self.values[f"{p}.population"],
            generations=self.values[f"{p}.generations"],
            stall=self.values[f"{p}.stall"],
            selection_rate=self.values["ga.selection_rate"],
            crossover_rate=self.values["ga.crossover_rate"],
            mutation_rate=self.values["ga.mutation_rate"],
            seed=self.values["seed"] if seed is None else seed,
        )

    def with_values(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        vals.update(kv)
        return RunConfig(vals, self.base_dir)


def write_config(values: Mapping[str, Any], path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")

