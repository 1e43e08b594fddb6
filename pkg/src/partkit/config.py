"""Config trees, command-line overrides, and run manifests.

Configs are YAML or JSON mappings.  Each command picks named sections out
of the tree and builds its dataclasses from them; unknown keys fail fast.
Every artifact-producing run writes a manifest next to its outputs with
the resolved config, its hash, the seed, and the package version, so a
finished run can be reproduced from the manifest alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError, PartkitError

MANIFEST_VERSION = 1


def read_tree(path: str | Path) -> dict:
    """Parse a YAML or JSON config file into a mapping."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        tree = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"config root must be a mapping, got {type(tree).__name__}")
    return unwrap_manifest(tree)


def unwrap_manifest(tree: dict) -> dict:
    """Accept a previously written manifest in place of a raw config."""
    if set(tree) >= {"manifest_version", "command", "config"}:
        inner = tree["config"]
        if not isinstance(inner, dict):
            raise ConfigError("manifest 'config' entry must be a mapping")
        return inner
    return tree


def apply_overrides(tree: dict, assignments: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as YAML scalars."""
    result = json.loads(json.dumps(tree))  # deep copy of plain data
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {assignment!r}")
        try:
            value = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = value
    return result


def _coerce(value, annotation: str):
    # YAML has no tuple literal; tuple-annotated fields accept lists
    if isinstance(value, list) and "tuple" in annotation:
        return tuple(value)
    return value


def build_section(cls, mapping: dict | None, section: str):
    """Construct a dataclass from one config section, rejecting unknown keys."""
    mapping = dict(mapping or {})
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(fields))
    if unknown:
        raise ConfigError(
            f"unknown key(s) in section {section!r}: {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(fields))}"
        )
    kwargs = {
        name: _coerce(value, str(fields[name].type))
        for name, value in mapping.items()
    }
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, PartkitError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


def take_section(tree: dict, name: str, default=None):
    value = tree.get(name, default)
    if value is not None and not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


def reject_unknown_sections(tree: dict, allowed: set[str]) -> None:
    unknown = sorted(set(tree) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown config section(s): {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def config_hash(tree: dict) -> str:
    canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def manifest_path(primary_output: str | Path) -> Path:
    primary = Path(primary_output)
    if primary.suffix:
        return primary.with_name(primary.name + ".manifest.json")
    return primary / "manifest.json"


def write_manifest(primary_output: str | Path, command: str, tree: dict,
                   seed: int | None) -> Path:
    payload = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": tree,
        "config_hash": config_hash(tree),
        "seed": seed,
        "code_version": __version__,
    }
    path = manifest_path(primary_output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path
