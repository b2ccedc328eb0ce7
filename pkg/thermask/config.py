"""
Configuration settings and the flat `key = value` config file reader.
"""

import dataclasses
import os
import typing

from dotenv import load_dotenv

from .errors import ConfigError

# Load environment variables from .env file
load_dotenv()

# Numeric precision for tensors and parameters (float64 for verification, float32 for speed)
DEFAULT_DTYPE = os.getenv("THERMASK_DTYPE", "float64")

# Worker threads for image decoding, cropping and curation scans
WORKERS = int(os.getenv("THERMASK_WORKERS", "2"))

# Seed used when neither the config file nor a CLI flag sets one
DEFAULT_SEED = int(os.getenv("THERMASK_SEED", "0"))

# Epochs between pretraining checkpoints
CHECKPOINT_EVERY = int(os.getenv("THERMASK_CHECKPOINT_EVERY", "5"))

# Where CLI commands write when no output path is given
OUTPUT_DIR = os.getenv("THERMASK_OUTPUT_DIR", "./runs/")

# Intensity levels of 8-bit grayscale imagery
GRAY_LEVELS = 256

# Curation defaults
DEDUP_THRESHOLD = 0.85
ZERO_THRESHOLD = 0
RESOLUTION_TOP_K = 10

IMAGE_EXTENSIONS = (".pgm", ".png")

if DEFAULT_DTYPE not in ("float64", "float32"):
    raise ConfigError(f"THERMASK_DTYPE must be float64 or float32, got {DEFAULT_DTYPE!r}")


def parse_config_text(text):
    """
    Parse flat `key = value` text.

    Args:
        text (str): Config file contents

    Returns:
        dict: key -> (raw value string, line number)
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=number)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=number, key=key)
        values[key] = (value, number)
    return values


def read_config_file(path):
    """Read and parse a config file, raising ConfigError if it cannot be read."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config_text(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e


def coerce_value(raw, annotation, key, line=None):
    """
    Convert a raw config string to the type a dataclass field declares.

    Args:
        raw (str): Value as written in the file or on the command line
        annotation: Field type (int, float, str, bool, Optional[...] or tuple[...])
        key (str): Field name, used in error messages
        line (int, optional): Source line for error messages

    Returns:
        The converted value
    """
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        return coerce_value(raw, inner[0], key, line)

    if origin is tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        element = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(coerce_value(p, element, key, line) for p in parts)
        if len(parts) != len(args):
            raise ConfigError(f"{key} expects {len(args)} comma-separated values, got {raw!r}",
                              line=line, key=key)
        return tuple(coerce_value(p, a, key, line) for p, a in zip(parts, args))

    try:
        if annotation is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key} ({getattr(annotation, '__name__', annotation)})",
                          line=line, key=key) from None


def field_types(cls):
    """Map dataclass field names to resolved type annotations."""
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def format_value(value):
    """Render a field value so coerce_value reads back the same value."""
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def canonical_text(config):
    """Single-line `key=value;...` rendering of a dataclass, sorted by key."""
    return ";".join(f"{key}={format_value(getattr(config, key))}"
                    for key in sorted(f.name for f in dataclasses.fields(config)))


def parse_canonical_text(cls, text):
    """Rebuild a dataclass from canonical_text output."""
    types = field_types(cls)
    values = {}
    for part in text.split(";"):
        if not part:
            continue
        key, _, raw = part.partition("=")
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in canonical config", key=key)
        values[key] = coerce_value(raw, types[key], key)
    return cls(**values)
