"""
Binary checkpoint and feature-grid files.

A file starts with one header line `DUGI1 <text>` followed by named blocks, each
`name\\ndtype\\nshape\\n` and then the little-endian raw values. Blocks are
written in sorted name order, so saving the same parameters twice gives the
same bytes.
"""

import os

import numpy as np

from .config import canonical_text, parse_canonical_text
from .errors import CheckpointError, ConfigError
from .model import ModelConfig, ThermalMAE

MAGIC = "DUGI1"


def _write_block(f, name, array):
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<")
    shape = ",".join(str(d) for d in array.shape)
    f.write(f"{name}\n{array.dtype.name}\n{shape}\n".encode("utf-8"))
    f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def write_blocks(path, header, arrays):
    """
    Write a header line and named arrays.

    Args:
        path (str): Destination file
        header (str): Text after the magic on the first line (no newlines)
        arrays (dict): name -> array
    """
    if "\n" in header:
        raise CheckpointError("checkpoint header must be a single line")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"{MAGIC} {header}\n".encode("utf-8"))
        for name in sorted(arrays):
            _write_block(f, name, arrays[name])


def _read_line(data, offset, path):
    end = data.find(b"\n", offset)
    if end < 0:
        raise CheckpointError(f"{path}: truncated block header at byte {offset}")
    return data[offset:end].decode("utf-8"), end + 1


def read_blocks(path):
    """
    Read a block file.

    Returns:
        tuple: (header text, dict name -> numpy array)
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e

    first, offset = _read_line(data, 0, path)
    magic, _, header = first.partition(" ")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} file (found {magic[:16]!r})")

    arrays = {}
    while offset < len(data):
        name, offset = _read_line(data, offset, path)
        dtype_name, offset = _read_line(data, offset, path)
        shape_text, offset = _read_line(data, offset, path)
        try:
            dtype = np.dtype(dtype_name).newbyteorder("<")
            shape = tuple(int(d) for d in shape_text.split(",") if d)
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: bad block header for {name!r}: {e}") from e
        count = int(np.prod(shape, dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(data):
            raise CheckpointError(f"{path}: block {name!r} is truncated")
        values = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        arrays[name] = values.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
        offset += size
    return header, arrays


def save_checkpoint(model, path):
    """Write a model's configuration and every parameter."""
    arrays = {name: p.data for name, p in model.parameters().items()}
    write_blocks(path, canonical_text(model.config), arrays)


def load_checkpoint(path):
    """
    Rebuild a model from a checkpoint.

    Returns:
        ThermalMAE: Model with the stored configuration and parameter values
    """
    header, arrays = read_blocks(path)
    try:
        config = parse_canonical_text(ModelConfig, header).validate()
    except ConfigError as e:
        raise CheckpointError(f"{path}: bad configuration header: {e}") from e
    model = ThermalMAE(config)
    params = model.parameters()
    missing = sorted(set(params) - set(arrays))
    unexpected = sorted(set(arrays) - set(params))
    if missing or unexpected:
        raise CheckpointError(f"{path}: parameter mismatch (missing {missing}, unexpected {unexpected})")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, model expects {p.shape}")
        p.data = arrays[name]
    return model


def save_feature_grids(pyramid, directory, source=""):
    """
    Write each pyramid level as its own block file `<level>.grid`.

    Returns:
        list: Written paths, F1 first
    """
    paths = []
    for level, grid in pyramid.levels().items():
        path = os.path.join(directory, f"{level}.grid")
        write_blocks(path, f"level={level};source={source}", {level: grid})
        paths.append(path)
    return paths
