"""Run-configuration parsing and validation.

Grammar: INI-style sections of `key = value` pairs (configparser syntax,
`#`/`;` comments). Unknown sections or keys are hard errors; every field has
a documented default, so a minimal config like

    [run]
    experiment = train

describes a complete S3 holonomic training run (N=32, stepwise curriculum to
L=5). All randomness derives from [run] seed. Cross-field constraints are
checked before any compute: the binding task requires a state dimension of
at least the variable count, and learned positional tables must cover the
curriculum's maximum length.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from . import models as md
from .errors import ConfigError
from .experiments import BINDING, S3, ModelConfig, TaskConfig, TrainConfig
from .group_tasks import Curriculum

EXPERIMENTS = ("train", "sweep", "scaling", "genlen", "horizon", "massgap",
               "pca", "scan-bench", "verify", "report")


@dataclass(frozen=True)
class SweepSpec:
    t_max: float = 2.0
    points: int = 41
    episodes: int = 512
    threshold: float = 0.99
    length: int = 5
    site: str = "auto"
    checkpoint: str = ""

    def grid(self):
        return [i * self.t_max / (self.points - 1) for i in range(self.points)]


@dataclass(frozen=True)
class ScalingSpec:
    widths: tuple = (8, 16, 32, 64, 128)


@dataclass(frozen=True)
class GenlenSpec:
    lengths: tuple = (50, 100, 200, 500, 1000, 2000, 5000)
    episodes: int = 512
    checkpoint: str = ""


@dataclass(frozen=True)
class HorizonSpec:
    t_max: int = 5000
    points: int = 24
    method: str = "both"   # autodiff | operator-norm | both
    fit_min_t: int = 5
    checkpoint: str = ""

    def grid(self):
        import numpy as np
        g = np.unique(np.geomspace(1, self.t_max, self.points).astype(int))
        return [int(t) for t in g]


@dataclass(frozen=True)
class MassGapSpec:
    episodes_per_class: int = 200
    length: int = 5
    checkpoint: str = ""


@dataclass(frozen=True)
class PcaSpec:
    temperature: float = 0.0
    episodes: int = 1200
    length: int = 5
    checkpoints: tuple = ()
    tags: tuple = ()


@dataclass(frozen=True)
class BenchSpec:
    lengths: tuple = (256, 1024, 4096, 16384)
    n: int = 32
    vocab: int = 6


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "train"
    seed: int = 0
    out: str = "results"
    workers: int = 1
    precision: int = 64
    model: ModelConfig = ModelConfig()
    task: TaskConfig = TaskConfig()
    curriculum: Curriculum = Curriculum(kind="stepwise", l_min=1, l_max=5)
    train: TrainConfig = TrainConfig()
    save: str = ""
    sweep: SweepSpec = SweepSpec()
    scaling: ScalingSpec = ScalingSpec()
    genlen: GenlenSpec = GenlenSpec()
    horizon: HorizonSpec = HorizonSpec()
    massgap: MassGapSpec = MassGapSpec()
    pca: PcaSpec = PcaSpec()
    bench: BenchSpec = BenchSpec()


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_tuple(cast):
    def parse(text: str):
        items = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(cast(p) for p in items)
    return parse


# section -> key -> (target dataclass attr path, parser)
_SCHEMA = {
    "run": {
        "experiment": ("experiment", str),
        "seed": ("seed", int),
        "out": ("out", str),
        "workers": ("workers", int),
        "precision": ("precision", int),
    },
    "model": {
        "kind": ("model.kind", str),
        "n": ("model.n", int),
        "layers": ("model.layers", int),
        "heads": ("model.heads", int),
        "d_ff": ("model.d_ff", int),
        "positional": ("model.pos_mode", str),
        "max_len": ("model.max_len", int),
        "pool": ("model.pool", str),
        "gen_scale": ("model.gen_scale", float),
    },
    "task": {
        "kind": ("task.kind", str),
        "variables": ("task.variables", int),
    },
    "curriculum": {
        "kind": ("curriculum.kind", str),
        "l_min": ("curriculum.l_min", int),
        "l_max": ("curriculum.l_max", int),
        "ramp_start": ("curriculum.ramp_start", int),
        "ramp_fraction": ("curriculum.ramp_fraction", float),
        "max_bias": ("curriculum.max_bias", float),
        "gate_threshold": ("curriculum.gate_threshold", float),
    },
    "train": {
        "steps": ("train.steps", int),
        "batch": ("train.batch", int),
        "lr": ("train.lr", float),
        "beta1": ("train.beta1", float),
        "beta2": ("train.beta2", float),
        "eps": ("train.eps", float),
        "clip": ("train.clip", float),
        "eval_interval": ("train.eval_interval", int),
        "gate_episodes": ("train.gate_episodes", int),
        "val_episodes": ("train.val_episodes", int),
        "target_accuracy": ("train.target_accuracy", float),
        "lr_schedule": ("train.lr_schedule", str),
        "lr_floor": ("train.lr_floor", float),
        "early_stop": ("train.early_stop", _parse_bool),
        "save": ("save", str),
    },
    "noise": {
        "t_max": ("sweep.t_max", float),
        "points": ("sweep.points", int),
        "episodes": ("sweep.episodes", int),
        "threshold": ("sweep.threshold", float),
        "length": ("sweep.length", int),
        "site": ("sweep.site", str),
        "checkpoint": ("sweep.checkpoint", str),
    },
    "scaling": {
        "widths": ("scaling.widths", _parse_tuple(int)),
    },
    "genlen": {
        "lengths": ("genlen.lengths", _parse_tuple(int)),
        "episodes": ("genlen.episodes", int),
        "checkpoint": ("genlen.checkpoint", str),
    },
    "horizon": {
        "t_max": ("horizon.t_max", int),
        "points": ("horizon.points", int),
        "method": ("horizon.method", str),
        "fit_min_t": ("horizon.fit_min_t", int),
        "checkpoint": ("horizon.checkpoint", str),
    },
    "massgap": {
        "episodes_per_class": ("massgap.episodes_per_class", int),
        "length": ("massgap.length", int),
        "checkpoint": ("massgap.checkpoint", str),
    },
    "pca": {
        "temperature": ("pca.temperature", float),
        "episodes": ("pca.episodes", int),
        "length": ("pca.length", int),
        "checkpoints": ("pca.checkpoints", _parse_tuple(str)),
        "tags": ("pca.tags", _parse_tuple(str)),
    },
    "bench": {
        "lengths": ("bench.lengths", _parse_tuple(int)),
        "n": ("bench.n", int),
        "vocab": ("bench.vocab", int),
    },
}


def _task_defaults(values: dict) -> dict:
    """Fill curriculum defaults from the task when not explicitly set."""
    task_kind = values.get("task.kind", S3)
    if task_kind == BINDING:
        values.setdefault("curriculum.kind", "ramp")
        values.setdefault("curriculum.l_min", 5)
        values.setdefault("curriculum.l_max", 50)
        values.setdefault("curriculum.ramp_start", 10)
    else:
        values.setdefault("curriculum.kind", "stepwise")
        values.setdefault("curriculum.l_min", 1)
        values.setdefault("curriculum.l_max", 5)
    return values


def parse_config(text: str) -> RunConfig:
    """Parse and validate the INI config text into a fully-defaulted RunConfig."""
    if not text.strip():
        raise ConfigError("empty configuration")
    parser = configparser.ConfigParser(strict=True, interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"parse error: {err}") from err
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            target, cast = _SCHEMA[section][key]
            try:
                values[target] = cast(raw)
            except ConfigError:
                raise
            except (TypeError, ValueError) as err:
                raise ConfigError(
                    f"bad value for [{section}] {key}: {raw!r} ({err})") from err
    values = _task_defaults(values)

    def build(prefix, cls):
        kwargs = {k.split(".", 1)[1]: v for k, v in values.items()
                  if k.startswith(prefix + ".")}
        try:
            return cls(**kwargs)
        except Exception as err:
            raise ConfigError(f"invalid [{prefix}] settings: {err}") from err

    top = {k: v for k, v in values.items() if "." not in k}
    cfg = RunConfig(
        **top,
        model=build("model", ModelConfig),
        task=build("task", TaskConfig),
        curriculum=build("curriculum", Curriculum),
        train=build("train", TrainConfig),
        sweep=build("sweep", SweepSpec),
        scaling=build("scaling", ScalingSpec),
        genlen=build("genlen", GenlenSpec),
        horizon=build("horizon", HorizonSpec),
        massgap=build("massgap", MassGapSpec),
        pca=build("pca", PcaSpec),
        bench=build("bench", BenchSpec),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{cfg.experiment}'; "
                          f"expected one of {', '.join(EXPERIMENTS)}")
    if cfg.precision not in (32, 64):
        raise ConfigError("precision must be 32 or 64")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        raise ConfigError("seed must fit in 64 bits")
    if cfg.model.kind not in md.MODEL_KINDS:
        raise ConfigError(f"unknown model kind '{cfg.model.kind}'")
    if cfg.task.kind not in (S3, BINDING):
        raise ConfigError(f"unknown task kind '{cfg.task.kind}'")
    if cfg.task.kind == BINDING and cfg.task.variables < 2:
        raise ConfigError("binding task needs at least 2 variables")
    if cfg.task.kind == BINDING and cfg.model.n < cfg.task.variables:
        raise ConfigError(
            f"state dimension n={cfg.model.n} violates the faithfulness "
            f"condition n >= variables ({cfg.task.variables}) for the "
            "binding task")
    if cfg.model.kind == md.TRANSFORMER and cfg.model.pos_mode == "learned" \
            and cfg.experiment == "train" \
            and cfg.model.max_len < cfg.curriculum.l_max:
        raise ConfigError(
            f"learned positional table (max_len={cfg.model.max_len}) smaller "
            f"than curriculum maximum length {cfg.curriculum.l_max}")
    if cfg.sweep.threshold <= 0 or cfg.sweep.threshold > 1:
        raise ConfigError("sweep threshold must lie in (0, 1]")
    if cfg.horizon.method not in ("autodiff", "operator-norm", "both"):
        raise ConfigError("horizon method must be autodiff, operator-norm or both")
    if cfg.experiment == "genlen" and cfg.precision != 64 \
            and any(length > 50 for length in cfg.genlen.lengths):
        raise ConfigError("genlen beyond L=50 requires precision = 64")
    if cfg.pca.checkpoints and cfg.pca.tags \
            and len(cfg.pca.checkpoints) != len(cfg.pca.tags):
        raise ConfigError("pca checkpoints and tags must have equal length")


def render_config(cfg: RunConfig) -> str:
    """Serialize the resolved config back to INI text (the run snapshot)."""
    parser = configparser.ConfigParser(interpolation=None)

    def put(section, mapping):
        parser[section] = {k: str(v) for k, v in mapping.items()}

    put("run", {"experiment": cfg.experiment, "seed": cfg.seed, "out": cfg.out,
                "workers": cfg.workers, "precision": cfg.precision})
    m = cfg.model
    put("model", {"kind": m.kind, "n": m.n, "layers": m.layers, "heads": m.heads,
                  "d_ff": m.d_ff, "positional": m.pos_mode, "max_len": m.max_len,
                  "pool": m.pool, "gen_scale": m.gen_scale})
    put("task", {"kind": cfg.task.kind, "variables": cfg.task.variables})
    c = cfg.curriculum
    put("curriculum", {"kind": c.kind, "l_min": c.l_min, "l_max": c.l_max,
                       "ramp_start": c.ramp_start, "ramp_fraction": c.ramp_fraction,
                       "max_bias": c.max_bias, "gate_threshold": c.gate_threshold})
    t = cfg.train
    put("train", {"steps": t.steps, "batch": t.batch, "lr": t.lr,
                  "beta1": t.beta1, "beta2": t.beta2, "eps": t.eps,
                  "clip": t.clip, "eval_interval": t.eval_interval,
                  "gate_episodes": t.gate_episodes, "val_episodes": t.val_episodes,
                  "target_accuracy": t.target_accuracy,
                  "lr_schedule": t.lr_schedule, "lr_floor": t.lr_floor,
                  "early_stop": t.early_stop, "save": cfg.save})
    s = cfg.sweep
    put("noise", {"t_max": s.t_max, "points": s.points, "episodes": s.episodes,
                  "threshold": s.threshold, "length": s.length, "site": s.site,
                  "checkpoint": s.checkpoint})
    put("scaling", {"widths": ",".join(str(w) for w in cfg.scaling.widths)})
    g = cfg.genlen
    put("genlen", {"lengths": ",".join(str(x) for x in g.lengths),
                   "episodes": g.episodes, "checkpoint": g.checkpoint})
    h = cfg.horizon
    put("horizon", {"t_max": h.t_max, "points": h.points, "method": h.method,
                    "fit_min_t": h.fit_min_t, "checkpoint": h.checkpoint})
    mg = cfg.massgap
    put("massgap", {"episodes_per_class": mg.episodes_per_class,
                    "length": mg.length, "checkpoint": mg.checkpoint})
    p = cfg.pca
    put("pca", {"temperature": p.temperature, "episodes": p.episodes,
                "length": p.length,
                "checkpoints": ",".join(p.checkpoints), "tags": ",".join(p.tags)})
    b = cfg.bench
    put("bench", {"lengths": ",".join(str(x) for x in b.lengths), "n": b.n,
                  "vocab": b.vocab})
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()
