"""TOML-style run configuration with dotted-path overrides.

The accepted grammar is a flat subset of TOML: optional [section] headers,
`key = value` lines, and #-comments. Values parse as booleans, integers,
floats, quoted strings, or [v1, v2, ...] lists of those. Every run writes
its resolved configuration back in the same format next to its outputs, so
a run is reproducible from the snapshot alone.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str):
    text = text.strip()
    if not text:
        raise ConfigError("empty value")
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    raise ConfigError(f"cannot parse value {text!r} (strings need quotes)")


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part) for part in inner.split(",")]
    return _parse_scalar(text)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    """Flat dict with dotted keys ('section.key')."""
    out: dict = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"line {lineno}: empty section name")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        full = f"{section}.{key}" if section else key
        try:
            out[full] = _parse_value(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return out


def load_config(path) -> dict:
    try:
        return parse_config_text(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value strings on top of the loaded config."""
    merged = dict(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        merged[key.strip()] = _parse_value(value)
    return merged


def dump_config(config: dict) -> str:
    """Serialize back to the same format, grouped by section, sorted."""
    sections: dict[str, dict[str, object]] = {}
    for key in sorted(config):
        section, _, leaf = key.rpartition(".")
        sections.setdefault(section, {})[leaf] = config[key]
    lines = []
    for name in sorted(sections):
        if name:
            lines.append(f"[{name}]")
        for leaf, value in sections[name].items():
            lines.append(f"{leaf} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def write_snapshot(config: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dump_config(config), encoding="utf-8")


def get(config: dict, key: str, default=None, required: bool = False):
    if key in config:
        return config[key]
    if required:
        raise ConfigError(f"missing required config key {key!r}")
    return default
