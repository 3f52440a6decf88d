"""Run configuration: flat sectioned key=value files, one prompt per block.

The file format is dependency-free: `[section]` headers, `key = value` lines,
`#` comments. Loading then re-serializing is idempotent. `FLOWRL_OUT_ROOT`
re-roots relative output directories.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .rewards import PromptSpec, RewardTask, default_prompt_pool
from .rl import VARIANTS, TrackerConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; message carries line context."""


@dataclass
class RunSection:
    seed: int = 0
    dim: int = 2
    out_dir: str = "runs/default"


@dataclass
class DatasetSection:
    kind: str = "ring"
    modes: int = 8
    radius: float = 2.0
    std: float = 0.1


@dataclass
class ModelSection:
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 4
    time_freqs: int = 3
    activation: str = "tanh"


@dataclass
class PretrainSection:
    steps: int = 4000
    batch: int = 128
    lr: float = 1e-3
    loss_warn_threshold: float = 4.0  # ring data floor is ~3.3 (irreducible variance)


@dataclass
class RLSection:
    variant: str = "superflow"
    iterations: int = 300
    batch_prompts: int = 4
    m_max: int = 24
    bins: int = 4
    t_train: int = 10
    t_eval: int = 40
    noise_level: float = 0.7
    eta: float = 1.0
    gamma: float = 1.0
    eps_clip: float = 0.2
    beta_kl: float = 0.04
    lr: float = 3e-3
    update_interval: int = 5
    invert_allocation: bool = False
    per_group_centering: bool = False
    eval_rollouts: int = 8
    eval_threshold: float = 0.5
    checkpoint: str = ""
    dump_trajectories: bool = False


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    rl: RLSection = field(default_factory=RLSection)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    prompts: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        if self.rl.variant not in VARIANTS:
            raise ConfigError(f"unknown rl.variant {self.rl.variant!r} "
                              f"(expected one of {VARIANTS})")
        if self.rl.m_max < self.rl.bins:
            raise ConfigError(f"rl.m_max ({self.rl.m_max}) must be >= rl.bins ({self.rl.bins})")
        if self.rl.t_train < 1 or self.rl.t_eval < 1:
            raise ConfigError("rl.t_train and rl.t_eval must be >= 1")
        if not self.prompts:
            raise ConfigError("config defines no [prompt.N] blocks")
        ids = [p["prompt_id"] for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate prompt ids: {sorted(ids)}")


_SECTIONS = {
    "run": RunSection,
    "dataset": DatasetSection,
    "model": ModelSection,
    "pretrain": PretrainSection,
    "rl": RLSection,
    "tracker": TrackerConfig,
}

_REQUIRED_SECTIONS = ("run", "dataset", "model", "pretrain", "rl")

_PROMPT_FIELDS = {
    "label": str, "kind": str, "target": "vec", "bandwidth": float,
    "center": "vec", "radius": float, "half_normal": "vec",
    "half_offset": float, "partial": float,
}


def _parse_value(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is str:
            return raw
        if typ == "vec":
            return tuple(float(v) for v in raw.split(","))
        if typ is tuple or isinstance(typ, tuple):
            return tuple(int(v) for v in raw.split(","))
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}: unsupported value type {typ}")


def load_config(path) -> RunConfig:
    """Parse a config file; errors name the offending line."""
    text = Path(path).read_text()
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cfg = RunConfig()
    seen: set[str] = set()
    section = None
    prompt_block: dict | None = None

    def flush_prompt():
        if prompt_block is not None:
            if "kind" not in prompt_block:
                raise ConfigError(f"{source}: prompt {prompt_block['prompt_id']} missing 'kind'")
            cfg.prompts.append(prompt_block)

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            flush_prompt()
            prompt_block = None
            name = line[1:-1].strip()
            if name.startswith("prompt."):
                try:
                    pid = int(name.split(".", 1)[1])
                except ValueError:
                    raise ConfigError(f"{where}: bad prompt id in [{name}]") from None
                prompt_block = {"prompt_id": pid}
                section = None
            elif name in _SECTIONS:
                section = name
                seen.add(name)
            else:
                raise ConfigError(f"{where}: unknown section [{name}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw_line.strip()!r}")
        key, _, raw_val = line.partition("=")
        key = key.strip()
        if prompt_block is not None:
            if key not in _PROMPT_FIELDS:
                raise ConfigError(f"{where}: unknown prompt field {key!r}")
            prompt_block[key] = _parse_value(raw_val, _PROMPT_FIELDS[key], where)
        elif section is not None:
            cls = _SECTIONS[section]
            by_name = {f.name: f for f in fields(cls)}
            if key not in by_name:
                raise ConfigError(f"{where}: unknown key {key!r} in section [{section}]")
            current = getattr(cfg, section)
            typ = type(by_name[key].default) if by_name[key].default is not None else str
            if key == "hidden":
                typ = tuple
            setattr(current, key, _parse_value(raw_val, typ, where))
        else:
            raise ConfigError(f"{where}: key outside any section")
    flush_prompt()

    missing = [s for s in _REQUIRED_SECTIONS if s not in seen]
    if missing:
        raise ConfigError(f"{source}: missing required section(s) {missing}")
    cfg.validate()
    return cfg


def _fmt_val(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    out = []
    for name in _SECTIONS:
        out.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in fields(sec):
            out.append(f"{f.name} = {_fmt_val(getattr(sec, f.name))}")
        out.append("")
    for p in sorted(cfg.prompts, key=lambda b: b["prompt_id"]):
        out.append(f"[prompt.{p['prompt_id']}]")
        for key in _PROMPT_FIELDS:
            if key in p:
                out.append(f"{key} = {_fmt_val(p[key])}")
        out.append("")
    return "\n".join(out)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg))


def resolve_out_dir(cfg: RunConfig) -> Path:
    """Config out_dir, re-rooted at $FLOWRL_OUT_ROOT when set and relative."""
    out = Path(cfg.run.out_dir)
    root = os.environ.get("FLOWRL_OUT_ROOT")
    if root and not out.is_absolute():
        return Path(root) / out
    return out


def build_pool(cfg: RunConfig) -> list[PromptSpec]:
    """Materialize PromptSpec objects from the config's prompt blocks."""
    pool = []
    for p in sorted(cfg.prompts, key=lambda b: b["prompt_id"]):
        kw = {}
        for key in ("target", "center", "half_normal"):
            if key in p:
                kw[key] = np.asarray(p[key], dtype=np.float64)
        for key in ("bandwidth", "radius", "half_offset", "partial"):
            if key in p:
                kw[key] = p[key]
        try:
            task = RewardTask(p["kind"], **kw)
        except ValueError as e:
            raise ConfigError(f"prompt {p['prompt_id']}: {e}") from None
        pool.append(PromptSpec(p["prompt_id"], task, label=p.get("label", "")))
    return pool


def _prompt_block(spec: PromptSpec) -> dict:
    t = spec.task
    block = {"prompt_id": spec.prompt_id, "label": spec.label, "kind": t.kind}
    if t.kind == "mode_target":
        block["target"] = tuple(float(v) for v in t.target)
        block["bandwidth"] = t.bandwidth
    elif t.kind == "region":
        block["center"] = tuple(float(v) for v in t.center)
        block["radius"] = t.radius
    else:
        block["center"] = tuple(float(v) for v in t.center)
        block["radius"] = t.radius
        block["half_normal"] = tuple(float(v) for v in t.half_normal)
        block["half_offset"] = t.half_offset
        block["partial"] = t.partial
    return block


def default_config(out_dir: str = "runs/default") -> RunConfig:
    """The 16-prompt toy setup with paper-scale RL constants."""
    cfg = RunConfig()
    cfg.run.out_dir = out_dir
    cfg.prompts = [_prompt_block(p) for p in default_prompt_pool()]
    cfg.validate()
    return cfg
