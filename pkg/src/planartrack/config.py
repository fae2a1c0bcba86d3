"""Layered config loading: defaults, then file values, then CLI overrides.

Unknown keys and wrong JSON types are hard errors carrying a
JSON-pointer-style path to the offending entry.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict

from . import errors
from .tracker import TrackerConfig

TRACKER_DEFAULTS = asdict(TrackerConfig())

EVALUATE_DEFAULTS = {
    "match_threshold": 0.5,
    "interpolation": "all-point",
}

DETECTION_DEFAULTS = {
    "conf_min": 0.25,
    "nms_iou": 0.7,
}

MOSAIC_DEFAULTS = {
    "dedupe_iou": 0.5,
}


def _check_type(template, value, path: str):
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise errors.TypeMismatch(f"{path}: expected bool, got {type(value).__name__}")
        return value
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise errors.TypeMismatch(f"{path}: expected number, got {type(value).__name__}")
        if isinstance(value, float) and not value.is_integer():
            raise errors.TypeMismatch(f"{path}: expected integer, got {value}")
        return int(value)
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise errors.TypeMismatch(f"{path}: expected number, got {type(value).__name__}")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise errors.TypeMismatch(f"{path}: expected string, got {type(value).__name__}")
        return value
    return value


def _merge(defaults: dict, values: dict, prefix: str) -> None:
    for key, value in values.items():
        path = f"{prefix}/{key}"
        if key not in defaults:
            raise errors.UnknownKey(path)
        template = defaults[key]
        if isinstance(template, dict):
            if not isinstance(value, dict):
                raise errors.TypeMismatch(f"{path}: expected object")
            _merge(template, value, path)
        else:
            defaults[key] = _check_type(template, value, path)


def parse_override(text: str) -> tuple[str, object]:
    """Parse a `key=value` CLI override; the value is read as JSON when
    possible and falls back to a bare string."""
    if "=" not in text:
        raise errors.TypeMismatch(f"override {text!r} must look like key=value")
    key, _, raw = text.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(defaults: dict, path=None, overrides: dict | None = None) -> dict:
    """Apply file values then overrides onto a copy of the defaults."""
    effective = copy.deepcopy(defaults)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise errors.TypeMismatch("/: config root must be a JSON object")
        _merge(effective, values, "")
    if overrides:
        nested: dict = {}
        for dotted, value in overrides.items():
            node = nested
            parts = dotted.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
        _merge(effective, nested, "")
    return effective
