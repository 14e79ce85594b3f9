"""Experiment configuration: a sectioned key/value file (INI dialect, version 1)
parsed into typed dataclasses with field-level diagnostics.

Sections: [run], [data], [synthetic], [encoder], [training], [sampler], [sweep].
Every key except data.source (and data.path for TSV sources) has a default;
values are parsed with the section.key named in any error. [sweep] keys are
comma-separated lists over alpha, beta, gamma, k and seed.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field

from .encoder import EncoderConfig
from .samplers import CurriculumSpec, SamplerSpec
from .synthetic import SyntheticSpec
from .training import TrainConfig
from .tensor import UsageError

CONFIG_VERSION = 1
SWEEP_AXES = ("alpha", "beta", "gamma", "k", "seed")
MAX_SWEEP_CELLS = 10_000


class ConfigError(ValueError):
    """Invalid or missing configuration; message names the offending field."""


@dataclass
class ExperimentConfig:
    out_dir: str
    seed: int
    threads: int
    source: str  # synthetic | tsv
    data_path: str | None
    max_len: int
    synthetic: SyntheticSpec | None
    train: TrainConfig
    sweep: dict[str, list] = field(default_factory=dict)
    allow_large_sweep: bool = False

    def sweep_cells(self) -> list[dict]:
        """Cross product of the sweep axes as per-cell override dicts."""
        cells: list[dict] = [{}]
        for axis in SWEEP_AXES:
            if axis not in self.sweep:
                continue
            cells = [dict(c, **{axis: v}) for c in cells for v in self.sweep[axis]]
        return cells


class _Section:
    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.raw = dict(parser[name]) if parser.has_section(name) else {}
        self.used: set[str] = set()

    def _get(self, key: str, cast, default, required: bool):
        if key not in self.raw:
            if required:
                raise ConfigError(f"missing required field: {self.name}.{key}")
            return default
        self.used.add(key)
        text = self.raw[key]
        try:
            return cast(text)
        except (ValueError, UsageError) as exc:
            raise ConfigError(f"invalid value for {self.name}.{key}: {text!r} ({exc})") from exc

    def str(self, key, default=None, required=False, choices=None):
        val = self._get(key, str, default, required)
        if choices and val is not None and val not in choices:
            raise ConfigError(f"{self.name}.{key} must be one of {sorted(choices)}, got {val!r}")
        return val

    def int(self, key, default=None, required=False):
        return self._get(key, lambda s: int(s, 10), default, required)

    def float(self, key, default=None, required=False):
        return self._get(key, float, default, required)

    def bool(self, key, default=False):
        def cast(s):
            s = s.strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        return self._get(key, cast, default, required=False)

    def unknown_keys(self) -> set[str]:
        return set(self.raw) - self.used


def _parse_list(text: str, cast):
    return [cast(part.strip()) for part in text.split(",") if part.strip()]


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(parser)


def load_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return parse_config(parser)


def parse_config(parser: configparser.ConfigParser) -> ExperimentConfig:
    run = _Section(parser, "run")
    version = run.int("config_version", default=CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"run.config_version {version} unsupported (expected {CONFIG_VERSION})")
    out_dir = run.str("out", default="runs/out")
    seed = run.int("seed", default=0)
    threads = run.int("threads", default=1)
    allow_large = run.bool("allow_large_sweep", default=False)

    if not parser.has_section("data"):
        raise ConfigError("missing required field: data.source")
    data = _Section(parser, "data")
    source = data.str("source", required=True, choices={"synthetic", "tsv"})
    data_path = data.str("path", default=None, required=(source == "tsv"))
    max_len = data.int("max_len", default=50)

    synthetic = None
    if source == "synthetic":
        syn = _Section(parser, "synthetic")
        try:
            synthetic = SyntheticSpec(
                n_users=syn.int("n_users", default=2000),
                n_items=syn.int("n_items", default=200),
                mean_len=syn.float("mean_len", default=20.0),
                mode=syn.str("mode", default="markov", choices={"markov", "confounder"}),
                temperature=syn.float("temperature", default=1.0),
                n_successors=syn.int("n_successors", default=8),
                succ_logit=syn.float("succ_logit", default=3.0),
                holdout_fraction=syn.float("holdout_fraction", default=0.1),
                seed=syn.int("seed", default=1),
            )
        except UsageError as exc:
            raise ConfigError(f"invalid [synthetic] section: {exc}") from exc

    enc = _Section(parser, "encoder")
    encoder = EncoderConfig(
        n_items=1,  # placeholder; replaced by the vocabulary size after ingestion
        max_len=max_len,
        d=enc.int("d", default=64),
        layers=enc.int("layers", default=2),
        heads=enc.int("heads", default=2),
        d_ff=enc.int("d_ff", default=256),
        dropout=enc.float("dropout", default=0.2),
        dtype=enc.str("dtype", default="float64", choices={"float32", "float64"}),
    )

    smp = _Section(parser, "sampler")
    curriculum = CurriculumSpec(
        mode=smp.str("curriculum", default="off", choices={"off", "self_adjusted"}),
        delta=smp.float("delta", default=0.01),
        alpha_min=smp.float("alpha_min", default=0.0),
        alpha_max=smp.float("alpha_max", default=6.0),
        smoothing=smp.float("smoothing", default=0.9),
    )
    try:
        sampler = SamplerSpec(
            kind=smp.str("kind", default="uniform", choices={"uniform", "popularity", "genni"}),
            gamma=smp.float("gamma", default=1.0),
            alpha=smp.float("alpha", default=1.0),
            beta_mode=smp.str("beta_mode", default="fixed", choices={"fixed", "gradual"}),
            beta=smp.float("beta", default=1.0),
            m=smp.float("m", default=20.0),
            k=smp.int("k", default=1),
            curriculum=curriculum,
            shared_candidates=smp.bool("shared_candidates", default=False),
            exclude_history=smp.bool("exclude_history", default=False),
        )
    except UsageError as exc:
        raise ConfigError(f"invalid [sampler] section: {exc}") from exc

    trn = _Section(parser, "training")
    try:
        train = TrainConfig(
            objective=trn.str("objective", default="nce", choices={"nce", "bpr"}),
            lr=trn.float("lr", default=1e-3),
            adam_beta1=trn.float("adam_beta1", default=0.9),
            adam_beta2=trn.float("adam_beta2", default=0.999),
            adam_eps=trn.float("adam_eps", default=1e-8),
            batch_size=trn.int("batch_size", default=256),
            max_epochs=trn.int("max_epochs", default=200),
            patience=trn.int("patience", default=40),
            seed=seed,
            sampler=sampler,
            encoder=encoder,
        )
    except UsageError as exc:
        raise ConfigError(f"invalid [training] section: {exc}") from exc

    sweep: dict[str, list] = {}
    if parser.has_section("sweep"):
        sw = _Section(parser, "sweep")
        for axis in SWEEP_AXES:
            if axis in sw.raw:
                cast = int if axis in ("k", "seed") else float
                values = sw._get(axis, lambda s: _parse_list(s, cast), None, required=False)
                if not values:
                    raise ConfigError(f"sweep.{axis} is empty")
                sweep[axis] = values
        extra = sw.unknown_keys()
        if extra:
            raise ConfigError(f"unknown sweep axes: {sorted(extra)} (supported: {SWEEP_AXES})")

    return ExperimentConfig(
        out_dir=out_dir, seed=seed, threads=threads, source=source, data_path=data_path,
        max_len=max_len, synthetic=synthetic, train=train, sweep=sweep,
        allow_large_sweep=allow_large,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-ready resolved configuration, the manifest's source of truth."""
    return {
        "config_version": CONFIG_VERSION,
        "out_dir": cfg.out_dir,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "source": cfg.source,
        "data_path": cfg.data_path,
        "max_len": cfg.max_len,
        "synthetic": asdict(cfg.synthetic) if cfg.synthetic else None,
        "train": asdict(cfg.train),
        "sweep": cfg.sweep,
        "allow_large_sweep": cfg.allow_large_sweep,
    }


def config_from_dict(d: dict) -> ExperimentConfig:
    if d.get("config_version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version in manifest: {d.get('config_version')}")
    train = dict(d["train"])
    sampler = dict(train.pop("sampler"))
    curriculum = CurriculumSpec(**sampler.pop("curriculum"))
    encoder = EncoderConfig(**train.pop("encoder"))
    return ExperimentConfig(
        out_dir=d["out_dir"], seed=d["seed"], threads=d["threads"], source=d["source"],
        data_path=d.get("data_path"), max_len=d["max_len"],
        synthetic=SyntheticSpec(**d["synthetic"]) if d.get("synthetic") else None,
        train=TrainConfig(sampler=SamplerSpec(curriculum=curriculum, **sampler),
                          encoder=encoder, **train),
        sweep={k: list(v) for k, v in d.get("sweep", {}).items()},
        allow_large_sweep=d.get("allow_large_sweep", False),
    )
