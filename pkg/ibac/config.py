"""
Run and sweep configuration.

A config file is one YAML document. Top-level keys ``run_id``, ``model_kind``,
``offset``, ``label_reduction``, ``out_dir`` plus the sections ``env``,
``model``, ``train``, ``binning`` and ``head``; sweep files add a ``sweep``
section. Every key has a default, unknown keys are rejected, and errors name
the offending field path (``env.episodes: must be >= 1``).
"""
import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import yaml

from ibac.errors import ConfigError

MAX_SEED = (1 << 64) - 1
ENV_KINDS = ("pointmass", "arm2link")
NUISANCE_MODES = ("static", "drift", "flicker")
ACTION_MODES = ("iid", "piecewise_constant")
MODEL_KINDS = ("vib", "idm")
HEAD_KINDS = ("direct", "index", "scratch", "mean")
LABEL_REDUCTIONS = ("first", "sum", "mean")
RANGE_MODES = ("per_channel_min_max", "fixed")


def _check(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _mapping(cls, data, path: str) -> dict:
    if data is None:
        return {}
    _check(isinstance(data, dict), path, f"expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    for key in data:
        _check(key in known, f"{path}.{key}" if path else key, "unknown key")
    return dict(data)


def _seed(value, path: str) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected an unsigned 64-bit integer, got {value!r}")
    _check(0 <= seed <= MAX_SEED, path, "must be an unsigned 64-bit integer")
    return seed


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _convert(value, default, path: str):
    # YAML 1.1 reads 1e-3 as a string, so numbers are converted by the type of the default
    if dataclasses.is_dataclass(default) or value is None:
        return value
    try:
        if isinstance(default, bool):
            _check(isinstance(value, bool), path, f"expected true or false, got {value!r}")
            return value
        if isinstance(default, int):
            _check(not isinstance(value, bool), path, f"expected an integer, got {value!r}")
            if isinstance(value, float):
                _check(value.is_integer(), path, f"expected an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            _check(not isinstance(value, bool), path, f"expected a number, got {value!r}")
            return float(value)
        if isinstance(default, tuple):
            _check(isinstance(value, (list, tuple)), path, f"expected a list, got {value!r}")
            if default:
                return tuple(_convert(v, default[0], f"{path}[{i}]") for i, v in enumerate(value))
            return tuple(value)
        if isinstance(default, str):
            _check(isinstance(value, str), path, f"expected a string, got {value!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}")
    return value


def _coerce(cls, kwargs: dict, path: str):
    """
    Build ``cls`` from already-checked keys, converting each value to the
    type of the field's default.
    """
    for f in fields(cls):
        if f.name in kwargs:
            kwargs[f.name] = _convert(kwargs[f.name], _default(f), f"{path}.{f.name}" if path else f.name)
    return cls(**kwargs)


def plain(obj):
    """Dataclass tree -> YAML/JSON-safe dicts and lists."""
    if dataclasses.is_dataclass(obj):
        return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: plain(v) for k, v in obj.items()}
    return obj


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "pointmass"
    state_dim: int = 2
    action_dim: int = 2
    nuisance_dim: int = 8
    nuisance_mode: str = "static"
    nuisance_drift_sigma: float = 0.05
    nuisance_rho: float = 0.0
    obs_noise_sigma: float = 0.0
    action_mode: str = "iid"
    segment_len: int = 8
    episode_len: int = 100
    episodes: int = 200
    velocity_features: bool = False
    joint_step: float = 0.1
    link_lengths: Tuple[float, float] = (1.0, 0.8)
    seed: int = 0

    def validate(self, path: str = "env") -> "EnvConfig":
        _check(self.kind in ENV_KINDS, f"{path}.kind", f"must be one of {ENV_KINDS}")
        _check(self.state_dim >= 1, f"{path}.state_dim", "must be >= 1")
        _check(self.action_dim >= 1, f"{path}.action_dim", "must be >= 1")
        _check(self.nuisance_dim >= 0, f"{path}.nuisance_dim", "must be >= 0")
        _check(self.nuisance_mode in NUISANCE_MODES, f"{path}.nuisance_mode", f"must be one of {NUISANCE_MODES}")
        _check(self.nuisance_drift_sigma >= 0, f"{path}.nuisance_drift_sigma", "must be >= 0")
        _check(0 <= self.nuisance_rho < 1, f"{path}.nuisance_rho", "must be in [0, 1)")
        _check(self.obs_noise_sigma >= 0, f"{path}.obs_noise_sigma", "must be >= 0")
        _check(self.action_mode in ACTION_MODES, f"{path}.action_mode", f"must be one of {ACTION_MODES}")
        _check(self.segment_len >= 1, f"{path}.segment_len", "must be >= 1")
        _check(self.episode_len >= 2, f"{path}.episode_len", "must be >= 2")
        _check(self.episodes >= 1, f"{path}.episodes", "must be >= 1")
        _check(self.joint_step > 0, f"{path}.joint_step", "must be > 0")
        _check(len(self.link_lengths) == 2 and all(l > 0 for l in self.link_lengths),
               f"{path}.link_lengths", "must be two positive lengths")
        if self.kind == "pointmass":
            _check(self.state_dim == self.action_dim, f"{path}.action_dim",
                   "pointmass actions displace the state, so action_dim must equal state_dim")
        else:
            _check(self.state_dim == 2, f"{path}.state_dim", "arm2link has exactly 2 joints")
            _check(self.action_dim == 2, f"{path}.action_dim", "arm2link has exactly 2 joints")
        _seed(self.seed, f"{path}.seed")
        return self

    @classmethod
    def from_dict(cls, data, path: str = "env") -> "EnvConfig":
        return _coerce(cls, _mapping(cls, data, path), path).validate(path)


@dataclass(frozen=True)
class ModelConfig:
    d_z: int = 4
    hidden: Tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    residual: bool = False

    def validate(self, path: str = "model") -> "ModelConfig":
        _check(self.d_z >= 1, f"{path}.d_z", "must be >= 1")
        _check(all(int(h) >= 1 for h in self.hidden), f"{path}.hidden", "widths must be >= 1")
        _check(self.activation in ("tanh", "relu"), f"{path}.activation", "must be tanh or relu")
        return self

    @classmethod
    def from_dict(cls, data, path: str = "model") -> "ModelConfig":
        return _coerce(cls, _mapping(cls, data, path), path).validate(path)


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1e-3
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: int = 256
    seed: int = 0
    lv_clamp: Tuple[float, float] = (-8.0, 4.0)
    log_every: int = 100

    def validate(self, path: str = "train") -> "TrainConfig":
        _check(self.beta >= 0, f"{path}.beta", "must be >= 0")
        _check(self.lr > 0, f"{path}.lr", "must be > 0")
        _check(self.epochs >= 0, f"{path}.epochs", "must be >= 0")
        _check(self.batch_size >= 1, f"{path}.batch_size", "must be >= 1")
        _check(len(self.lv_clamp) == 2 and self.lv_clamp[0] < self.lv_clamp[1],
               f"{path}.lv_clamp", "must be [lv_min, lv_max] with lv_min < lv_max")
        _check(self.log_every >= 1, f"{path}.log_every", "must be >= 1")
        _seed(self.seed, f"{path}.seed")
        return self

    @classmethod
    def from_dict(cls, data, path: str = "train") -> "TrainConfig":
        return _coerce(cls, _mapping(cls, data, path), path).validate(path)


@dataclass(frozen=True)
class BinningConfig:
    n_bins: int = 256
    range_mode: str = "per_channel_min_max"
    range: Optional[Tuple[float, float]] = None

    def validate(self, path: str = "binning") -> "BinningConfig":
        _check(self.n_bins >= 2, f"{path}.n_bins", "must be >= 2")
        _check(self.range_mode in RANGE_MODES, f"{path}.range_mode", f"must be one of {RANGE_MODES}")
        if self.range_mode == "fixed":
            _check(self.range is not None and len(self.range) == 2 and self.range[0] < self.range[1],
                   f"{path}.range", "fixed range_mode needs [lo, hi] with lo < hi")
        return self

    @classmethod
    def fixed(cls, lo: float, hi: float, n_bins: int = 256) -> "BinningConfig":
        return cls(n_bins, "fixed", (float(lo), float(hi))).validate()

    @classmethod
    def from_dict(cls, data, path: str = "binning") -> "BinningConfig":
        kwargs = _mapping(cls, data, path)
        if kwargs.get("range") is not None:
            kwargs["range"] = _convert(kwargs["range"], (0.0, 0.0), f"{path}.range")
        return _coerce(cls, kwargs, path).validate(path)


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "direct"
    m: int = 50
    hidden: Tuple[int, ...] = (32,)
    activation: str = "tanh"
    residual: bool = False
    lr: float = 3e-3
    epochs: int = 500
    batch_size: int = 64
    weight_decay: float = 1e-3
    val_fraction: float = 0.2
    patience: int = 50
    n_codes: int = 16
    kmeans_max_iter: int = 100
    classifier_epochs: int = 50
    classifier_batch_size: int = 256
    eval_fraction: float = 0.2
    seed: int = 0

    def validate(self, path: str = "head") -> "HeadConfig":
        _check(self.kind in HEAD_KINDS, f"{path}.kind", f"must be one of {HEAD_KINDS}")
        _check(self.m >= 1, f"{path}.m", "must be >= 1")
        _check(all(int(h) >= 1 for h in self.hidden), f"{path}.hidden", "widths must be >= 1")
        _check(self.activation in ("tanh", "relu"), f"{path}.activation", "must be tanh or relu")
        _check(self.lr > 0, f"{path}.lr", "must be > 0")
        _check(self.epochs >= 0, f"{path}.epochs", "must be >= 0")
        _check(self.batch_size >= 1, f"{path}.batch_size", "must be >= 1")
        _check(self.weight_decay >= 0, f"{path}.weight_decay", "must be >= 0")
        _check(0 <= self.val_fraction < 1, f"{path}.val_fraction", "must be in [0, 1)")
        _check(self.patience >= 1, f"{path}.patience", "must be >= 1")
        _check(self.n_codes >= 1, f"{path}.n_codes", "must be >= 1")
        _check(self.kmeans_max_iter >= 1, f"{path}.kmeans_max_iter", "must be >= 1")
        _check(self.classifier_epochs >= 0, f"{path}.classifier_epochs", "must be >= 0")
        _check(self.classifier_batch_size >= 1, f"{path}.classifier_batch_size", "must be >= 1")
        _check(0 < self.eval_fraction < 1, f"{path}.eval_fraction", "must be in (0, 1)")
        _seed(self.seed, f"{path}.seed")
        return self

    @classmethod
    def from_dict(cls, data, path: str = "head") -> "HeadConfig":
        return _coerce(cls, _mapping(cls, data, path), path).validate(path)


@dataclass(frozen=True)
class RunConfig:
    run_id: str = "run"
    model_kind: str = "vib"
    offset: int = 1
    label_reduction: str = "first"
    out_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    binning: BinningConfig = field(default_factory=BinningConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    SECTIONS = {"env": EnvConfig, "model": ModelConfig, "train": TrainConfig,
                "binning": BinningConfig, "head": HeadConfig}

    def validate(self, path: str = "") -> "RunConfig":
        _check(self.model_kind in MODEL_KINDS, "model_kind", f"must be one of {MODEL_KINDS}")
        _check(self.offset >= 1, "offset", "must be >= 1")
        _check(self.offset < self.env.episode_len, "offset", "must be smaller than env.episode_len")
        _check(self.label_reduction in LABEL_REDUCTIONS, "label_reduction", f"must be one of {LABEL_REDUCTIONS}")
        _check(bool(str(self.run_id)), "run_id", "must not be empty")
        return self

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / str(self.run_id)

    def with_seed(self, seed: int) -> "RunConfig":
        seed = _seed(seed, "--seed")
        return dataclasses.replace(self, env=dataclasses.replace(self.env, seed=seed),
                                   train=dataclasses.replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return plain(self)

    @classmethod
    def from_dict(cls, data, path: str = "") -> "RunConfig":
        kwargs = _mapping(cls, data, path)
        for name, section in cls.SECTIONS.items():
            kwargs[name] = section.from_dict(kwargs.get(name), name)
        return _coerce(cls, kwargs, path).validate()


@dataclass(frozen=True)
class SweepConfig:
    base: RunConfig = field(default_factory=RunConfig)
    kinds: Tuple[str, ...] = MODEL_KINDS
    beta_grid: Tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    offset_grid: Tuple[int, ...] = (1, 2, 4, 8)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    parallelism: int = 1
    fit_heads: bool = True

    def validate(self, path: str = "sweep") -> "SweepConfig":
        _check(len(self.kinds) > 0 and all(k in MODEL_KINDS for k in self.kinds),
               f"{path}.kinds", f"must be a nonempty subset of {MODEL_KINDS}")
        _check(len(self.beta_grid) > 0 and all(b >= 0 for b in self.beta_grid),
               f"{path}.beta_grid", "must be a nonempty list of values >= 0")
        _check(len(self.offset_grid) > 0 and all(1 <= k < self.base.env.episode_len for k in self.offset_grid),
               f"{path}.offset_grid", "must be a nonempty list of offsets in [1, env.episode_len)")
        _check(len(self.seeds) > 0, f"{path}.seeds", "must be nonempty")
        for i, s in enumerate(self.seeds):
            _seed(s, f"{path}.seeds[{i}]")
        _check(self.parallelism >= 1, f"{path}.parallelism", "must be >= 1")
        return self

    def effective_parallelism(self) -> int:
        cap = os.environ.get("IBAC_THREADS")
        if cap:
            try:
                return max(1, min(self.parallelism, int(cap)))
            except ValueError:
                raise ConfigError(f"IBAC_THREADS: expected an integer, got {cap!r}")
        return self.parallelism

    def to_dict(self) -> dict:
        d = self.base.to_dict()
        d["sweep"] = {k: v for k, v in plain(self).items() if k != "base"}
        return d

    @classmethod
    def from_dict(cls, data) -> "SweepConfig":
        data = dict(data or {})
        sweep = data.pop("sweep", None)
        base = RunConfig.from_dict(data)
        kwargs = _mapping(cls, sweep, "sweep")
        _check("base" not in kwargs, "sweep.base", "unknown key")
        kwargs["base"] = base
        return _coerce(cls, kwargs, "sweep").validate()


def _read_yaml(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})")
    return data or {}


def load_run_config(path) -> RunConfig:
    data = _read_yaml(path)
    data.pop("sweep", None)
    return RunConfig.from_dict(data)


def load_sweep_config(path) -> SweepConfig:
    return SweepConfig.from_dict(_read_yaml(path))


def dump_config(config, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True, default_flow_style=False)
    return path
