"""Run configuration: a flat key=value text file with a closed key set.

Hyperparameters live in the config file; command-line flags are reserved
for paths and run modes so that a config plus a seed pins a whole run.
Unknown keys are rejected. `resolved_text` renders every effective value so
each run can archive its configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .model import ModelConfig
from .synthdata import SynthConfig
from .training import StageConfig, stage1_config, stage2_config


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalSettings:
    nms_thresh: float = 0.5
    softnms_method: str = "linear"
    softnms_thresh: float = 0.5
    softnms_sigma: float = 0.5
    softnms_floor: float = 0.001
    vote_thresh: float = 0.5
    no_removal_thresh: float = 0.01


@dataclass
class RunConfig:
    seed: int = 0
    data: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stage1: StageConfig = field(default_factory=stage1_config)
    stage2: StageConfig = field(default_factory=stage2_config)
    eval: EvalSettings = field(default_factory=EvalSettings)


def _parse_eta(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"model.eta must be a comma-separated float list, got {text!r}")


def _parse_bounds(kind):
    def parse(text: str):
        try:
            return kind(text)
        except ValueError:
            raise ConfigError(f"expected {kind.__name__}, got {text!r}")

    return parse


_INT = _parse_bounds(int)
_FLOAT = _parse_bounds(float)
_STR = str

# key -> (section, field, parser); section "" targets RunConfig itself.
KEYS: dict[str, tuple[str, str, object]] = {
    "seed": ("", "seed", _INT),
    "data.classes": ("data", "classes", _INT),
    "data.image_w": ("data", "image_w", _FLOAT),
    "data.image_h": ("data", "image_h", _FLOAT),
    "data.objects_min": ("data", "objects_per_scene:0", _INT),
    "data.objects_max": ("data", "objects_per_scene:1", _INT),
    "data.proposals_min": ("data", "proposals_per_object:0", _INT),
    "data.proposals_max": ("data", "proposals_per_object:1", _INT),
    "data.jitter": ("data", "jitter", _FLOAT),
    "data.score_slope": ("data", "score_slope", _FLOAT),
    "data.score_offset": ("data", "score_offset", _FLOAT),
    "data.score_noise": ("data", "score_noise", _FLOAT),
    "data.feat_dim": ("data", "feat_dim", _INT),
    "data.feat_noise": ("data", "feat_noise", _FLOAT),
    "data.background_rate": ("data", "background_rate", _FLOAT),
    "model.d_l": ("model", "d_l", _INT),
    "model.d_r": ("model", "d_r", _INT),
    "model.d_att": ("model", "d_att", _INT),
    "model.eta": ("model", "eta", _parse_eta),
    "model.cap": ("model", "cap", _INT),
    "stage1.score_gate": ("stage1", "score_gate", _FLOAT),
    "stage1.pos_weight": ("stage1", "pos_weight", _FLOAT),
    "stage1.nms_thresh": ("stage1", "nms_thresh", _FLOAT),
    "stage1.epochs": ("stage1", "epochs", _INT),
    "stage1.lr": ("stage1", "lr", _FLOAT),
    "stage1.lr_final": ("stage1", "lr_final", _FLOAT),
    "stage1.momentum": ("stage1", "momentum", _FLOAT),
    "stage1.weight_decay": ("stage1", "weight_decay", _FLOAT),
    "stage2.score_gate": ("stage2", "score_gate", _FLOAT),
    "stage2.pos_weight": ("stage2", "pos_weight", _FLOAT),
    "stage2.epochs": ("stage2", "epochs", _INT),
    "stage2.lr": ("stage2", "lr", _FLOAT),
    "stage2.lr_final": ("stage2", "lr_final", _FLOAT),
    "stage2.momentum": ("stage2", "momentum", _FLOAT),
    "stage2.weight_decay": ("stage2", "weight_decay", _FLOAT),
    "eval.nms_thresh": ("eval", "nms_thresh", _FLOAT),
    "eval.softnms_method": ("eval", "softnms_method", _STR),
    "eval.softnms_thresh": ("eval", "softnms_thresh", _FLOAT),
    "eval.softnms_sigma": ("eval", "softnms_sigma", _FLOAT),
    "eval.softnms_floor": ("eval", "softnms_floor", _FLOAT),
    "eval.vote_thresh": ("eval", "vote_thresh", _FLOAT),
    "eval.no_removal_thresh": ("eval", "no_removal_thresh", _FLOAT),
}


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    """Parse key=value lines; '#' starts a comment, blank lines are ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate config key {key!r}")
        values[key] = val
    return build_config(values)


def parse_config_file(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), origin=str(path))


def build_config(values: dict[str, str]) -> RunConfig:
    sections: dict[str, dict[str, object]] = {"": {}, "data": {}, "model": {}, "stage1": {}, "stage2": {}, "eval": {}}
    pair_fields: dict[tuple[str, str], dict[int, object]] = {}
    for key, raw in values.items():
        section, target, parser = KEYS[key]
        try:
            parsed = parser(raw)
        except ConfigError as e:
            raise ConfigError(f"key {key!r}: {e}")
        if ":" in target:
            name, idx = target.split(":")
            pair_fields.setdefault((section, name), {})[int(idx)] = parsed
        else:
            sections[section][target] = parsed

    cfg = RunConfig()
    seed = sections[""].get("seed", cfg.seed)
    data = replace(cfg.data, seed=seed, **sections["data"])
    for (section, name), parts in pair_fields.items():
        current = list(getattr(data, name))
        for idx, v in parts.items():
            current[idx] = v
        data = replace(data, **{name: tuple(current)})
    model = replace(cfg.model, d_a=data.feat_dim, **sections["model"])
    try:
        stage1 = replace(cfg.stage1, **sections["stage1"])
        stage2 = replace(cfg.stage2, **sections["stage2"])
        ev = replace(cfg.eval, **sections["eval"])
    except ValueError as e:
        raise ConfigError(str(e))
    return RunConfig(seed=seed, data=data, model=model, stage1=stage1, stage2=stage2, eval=ev)


def resolved_text(cfg: RunConfig) -> str:
    """Render every known key with its effective value, in registry order."""
    out = []
    for key, (section, target, _parser) in KEYS.items():
        holder = cfg if section == "" else getattr(cfg, section)
        if ":" in target:
            name, idx = target.split(":")
            value = getattr(holder, name)[int(idx)]
        elif key == "model.eta":
            value = ",".join(repr(e) for e in holder.eta)
        else:
            value = getattr(holder, target)
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
