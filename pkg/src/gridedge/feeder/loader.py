import json
import logging
from pathlib import Path
from typing import Union

import jsonschema
from pydantic import ValidationError

from gridedge.feeder.models import SENSOR_KINDS, FeederDescription
from gridedge.shared.constants import FEEDER_FORMAT
from gridedge.shared.exceptions import ConfigError, DataIOError


logger = logging.getLogger(__name__)

_PAIR = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}
_PHASES = {
    "type": "array",
    "items": {"enum": ["a", "b", "c"]},
    "minItems": 1,
    "maxItems": 3,
    "uniqueItems": True,
}

FEEDER_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": FEEDER_FORMAT,
    "type": "object",
    "required": ["format", "buses", "lines", "loads", "v0"],
    "properties": {
        "format": {"const": FEEDER_FORMAT},
        "name": {"type": "string"},
        "buses": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["id"],
                "properties": {
                    "id": {"type": "string"},
                    "phases": _PHASES,
                    "is_reference": {"type": "boolean"},
                },
                "additionalProperties": False,
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from_bus", "to_bus", "admittance"],
                "properties": {
                    "from_bus": {"type": "string"},
                    "to_bus": {"type": "string"},
                    "phases": _PHASES,
                    "admittance": {
                        "type": "array",
                        "items": {"type": "array", "items": _PAIR},
                    },
                },
                "additionalProperties": False,
            },
        },
        "loads": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bus", "phase", "index"],
                "properties": {
                    "bus": {"type": "string"},
                    "phase": {"enum": ["a", "b", "c"]},
                    "index": {"type": "integer", "minimum": 1},
                },
                "additionalProperties": False,
            },
        },
        "v0": {"type": "array", "items": _PAIR, "minItems": 3, "maxItems": 3},
        "sensors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "bus"],
                "properties": {
                    "kind": {"enum": list(SENSOR_KINDS)},
                    "bus": {"type": "string"},
                    "downstream": {
                        "type": ["array", "null"],
                        "items": {"type": "integer", "minimum": 1},
                    },
                    "name": {"type": ["string", "null"]},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def validation_message(error: ValidationError) -> str:
    """One line per failing field, prefixed with its dotted location."""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "\n".join(lines)


def parse_feeder(data: dict, source: str = "<memory>") -> FeederDescription:
    """Validate a decoded feeder document and build the description.

    Raises:
        ConfigError: the document violates the schema or the model invariants.
    """
    try:
        jsonschema.validate(data, FEEDER_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(part) for part in e.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {e.message}") from e
    try:
        return FeederDescription.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: invalid feeder\n{validation_message(e)}") from e


def load_feeder(path: Union[str, Path]) -> FeederDescription:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Feeder file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataIOError(f"Cannot parse feeder file {path}: {e}") from e
    desc = parse_feeder(data, str(path))
    logger.debug(
        f"loaded feeder '{desc.name}' from {path}: {len(desc.buses)} buses, "
        f"{desc.n_loads} loads, {len(desc.sensors)} sensors"
    )
    return desc


def dump_feeder(desc: FeederDescription, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.write_text(
            json.dumps(desc.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        )
    except OSError as e:
        raise DataIOError(f"Failed to write feeder file {path}: {e}") from e
    return path
