"""Plain-text ``key = value`` configuration files for the loss and solver."""

from dataclasses import fields
from pathlib import Path

from bidiflow.energy import LossConfig
from bidiflow.solver import SolverConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _field_types(cls):
    return {f.name: type(f.default) for f in fields(cls)}


LOSS_KEYS = _field_types(LossConfig)
SOLVER_KEYS = _field_types(SolverConfig)


def parse_value(key, text, kind):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind is tuple:
            return tuple(float(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"bad value for {key}: {text!r}") from None


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, source="<config>"):
    """Split ``key = value`` lines into (loss overrides, solver overrides).

    Blank lines and ``#`` comments are ignored; unknown keys are an error.
    """
    loss, solver = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key in LOSS_KEYS:
            loss[key] = parse_value(key, value, LOSS_KEYS[key])
        elif key in SOLVER_KEYS:
            solver[key] = parse_value(key, value, SOLVER_KEYS[key])
        else:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
    if "level_patch_radii" in loss:
        loss["level_patch_radii"] = tuple(int(r) for r in loss["level_patch_radii"])
    return loss, solver


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def build_configs(loss_overrides=None, solver_overrides=None):
    return LossConfig(**(loss_overrides or {})), SolverConfig(**(solver_overrides or {}))


def dump_config(loss_cfg, solver_cfg):
    lines = ["# loss"]
    lines += [f"{k} = {format_value(v)}" for k, v in loss_cfg.to_dict().items()]
    lines.append("# solver")
    lines += [f"{k} = {format_value(v)}" for k, v in solver_cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def save_config(path, loss_cfg, solver_cfg):
    Path(path).write_text(dump_config(loss_cfg, solver_cfg))
