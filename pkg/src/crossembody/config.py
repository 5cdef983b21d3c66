"""Experiment configuration: one YAML document with a section per module."""

from __future__ import annotations

import copy
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .dataset.demos import ReachTaskConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .kinematics import PRESETS, IkParams
from .policy.model import PolicyConfig
from .policy.optim import OptimConfig
from .policy.train import TrainConfig
from .retarget import RetargetConfig, retarget_config_from_dict

SECTIONS = ("experiment", "paths", "retarget", "tasks", "dataset", "model", "train", "eval", "selftest")
REQUIRED = ("experiment.seed", "paths.out_dir", "dataset.horizon")

class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-3``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"""),
    list("-+0123456789"),
)


def load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


ENV_SEED = "XEMB_SEED"
ENV_THREADS = "XEMB_THREADS"


@dataclass(frozen=True)
class DatasetSection:
    demos_per_embodiment: int = 200
    heldout_per_embodiment: int = 20
    horizon: int = 16
    stride: int = 1


@dataclass(frozen=True)
class SelftestSection:
    configs: int = 3
    coords: int = 200
    eps: float = 1e-6
    tol: float = 1e-4


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    out_dir: Path
    retarget: RetargetConfig
    tasks: list
    dataset: DatasetSection
    model: dict
    train: TrainConfig
    eval: EvalConfig
    selftest: SelftestSection
    raw: dict

    @property
    def horizon(self) -> int:
        return self.dataset.horizon

    @property
    def vocab_size(self) -> int:
        return max(t.instruction_id for t in self.tasks) + 1

    def policy_config(self, scene_dim: int) -> PolicyConfig:
        return PolicyConfig(scene_dim=scene_dim, vocab_size=self.vocab_size, horizon=self.horizon,
                            init_seed=self.seed, **self.model)

    def path(self, name: str) -> Path:
        return self.out_dir / name


def _get(d: dict, dotted: str):
    cur = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def parse_value(text: str):
    """Scalar from an override string, using YAML rules (``1e-3``, ``true``, ``[1, 2]``)."""
    try:
        return load_yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {text!r}") from exc


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; list items are addressed by index (``tasks.0.side``)."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like key=value")
        parts = key.split(".")
        cur = raw
        for i, part in enumerate(parts[:-1]):
            if isinstance(cur, list):
                cur = cur[int(part)]
            else:
                nxt = cur.get(part)
                if nxt is None:
                    nxt = [] if parts[i + 1].isdigit() else {}
                    cur[part] = nxt
                cur = nxt
        last = parts[-1]
        if isinstance(cur, list):
            cur[int(last)] = parse_value(value)
        else:
            cur[last] = parse_value(value)
    return raw


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name} must be a mapping")
    return dict(value)


def _build(cls, values: dict, where: str, convert=None):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(sorted(f'{where}.{k}' for k in unknown))}")
    if convert:
        values = {k: convert(k, v) for k, v in values.items()}
    for f in fields(cls):
        if f.name in values and isinstance(f.default, (int, float)):
            values[f.name] = _number(values[f.name], type(f.default), f"{where}.{f.name}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _number(value, kind, where: str):
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{where} must be a number, got {value!r}") from None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if kind is int:
        if value != int(value):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _tuple_lists(_, v):
    return tuple(v) if isinstance(v, list) else v


def _task(d: dict, where: str) -> ReachTaskConfig:
    d = dict(d)
    if "ik" in d:
        d["ik"] = _build(IkParams, d["ik"], f"{where}.ik")
    return _build(ReachTaskConfig, d, where, _tuple_lists)


def _resolve_chain_paths(retarget: dict, base: Path) -> dict:
    chains = retarget.get("chains")
    if not chains:
        return retarget
    out = dict(retarget)
    out["chains"] = {}
    for side, spec in chains.items():
        if isinstance(spec, str) and spec not in PRESETS:
            p = Path(spec)
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ConfigError(f"retarget.chains.{side}: chain file {spec} not found")
            spec = str(p)
        out["chains"][side] = spec
    return out


def from_dict(raw: dict, base_dir: Path | None = None, env=None) -> ExperimentConfig:
    """Validate a raw config mapping.

    ``base_dir`` anchors relative paths (normally the config file's folder).
    ``env`` defaults to ``os.environ``; ``XEMB_SEED`` overrides the seed.
    """
    env = os.environ if env is None else env
    base_dir = Path(base_dir or ".")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for key in REQUIRED:
        try:
            _get(raw, key)
        except KeyError:
            raise ConfigError(f"missing required field: {key}") from None
    exp = _section(raw, "experiment")
    if set(exp) - {"name", "seed"}:
        raise ConfigError(f"unknown field(s): {', '.join(sorted('experiment.' + k for k in set(exp) - {'name', 'seed'}))}")
    seed = exp["seed"]
    if env.get(ENV_SEED):
        try:
            seed = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("experiment.seed must be a non-negative integer")
    paths = _section(raw, "paths")
    if set(paths) - {"out_dir"}:
        raise ConfigError(f"unknown field(s): {', '.join(sorted('paths.' + k for k in set(paths) - {'out_dir'}))}")
    out_dir = Path(paths["out_dir"])
    out_dir = out_dir if out_dir.is_absolute() else base_dir / out_dir

    try:
        retarget = retarget_config_from_dict(_resolve_chain_paths(_section(raw, "retarget"), base_dir))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"retarget: {exc}") from exc

    tasks_raw = raw.get("tasks")
    if tasks_raw is None:
        tasks = [ReachTaskConfig()]
    elif not isinstance(tasks_raw, list) or not tasks_raw:
        raise ConfigError("tasks must be a non-empty list")
    else:
        tasks = [_task(t or {}, f"tasks.{i}") for i, t in enumerate(tasks_raw)]
    if len({t.name for t in tasks}) != len(tasks):
        raise ConfigError("task names must be unique")

    dataset = _build(DatasetSection, _section(raw, "dataset"), "dataset")
    if dataset.horizon < 1:
        raise ConfigError("dataset.horizon must be >= 1")
    if dataset.stride < 1:
        raise ConfigError("dataset.stride must be >= 1")

    model = _section(raw, "model")
    allowed = {f.name for f in fields(PolicyConfig)} - {"scene_dim", "vocab_size", "horizon", "init_seed"}
    if set(model) - allowed:
        raise ConfigError(f"unknown field(s): {', '.join(sorted('model.' + k for k in set(model) - allowed))}")
    try:
        PolicyConfig(**model)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc

    tr = _section(raw, "train")
    opt_names = {f.name for f in fields(OptimConfig)}
    opt = _build(OptimConfig, {k: v for k, v in tr.items() if k in opt_names}, "train")
    train = _build(TrainConfig, {k: v for k, v in tr.items() if k not in opt_names}, "train")
    train = TrainConfig(steps=train.steps, batch_size=train.batch_size, seed=seed, use_r2h=train.use_r2h,
                        use_h2r=train.use_h2r, optim=opt)
    if train.steps < 0 or train.batch_size < 1:
        raise ConfigError("train.steps must be >= 0 and train.batch_size >= 1")

    ev = _section(raw, "eval")
    if "ik" in ev:
        ev["ik"] = _build(IkParams, ev["ik"], "eval.ik")
    evalc = _build(EvalConfig, ev, "eval")
    selftest = _build(SelftestSection, _section(raw, "selftest"), "selftest")
    return ExperimentConfig(exp.get("name", "experiment"), seed, out_dir, retarget, tasks, dataset, model,
                            train, evalc, selftest, raw)


def load_config(path, overrides=None, env=None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = load_yaml(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(apply_overrides(raw, overrides), path.parent, env)
