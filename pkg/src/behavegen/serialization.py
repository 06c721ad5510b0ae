"""Deterministic artifact serialization.

Two rules make artifacts byte-identical across runs with the same seed:
keys are emitted in sorted order, and every float is written with 17
significant digits so the decimal text round-trips to the exact same bits.

Checkpoints are a JSON manifest next to a flat binary blob.  The blob holds
every parameter tensor as little-endian float64 in sorted-name order, the
manifest records shapes, hyperparameters and the RNG state.
"""

import json
import os

import numpy as np

from .errors import MissingArtifact, NonFiniteInput

SCHEMA_VERSION = 1


def _fmt_float(x: float) -> str:
    if not np.isfinite(x):
        raise NonFiniteInput("cannot serialise non-finite float")
    text = format(float(x), ".17g")
    # keep floats parseable as floats: '1' -> '1.0', '-0' -> '-0.0'
    if "." not in text and "e" not in text and "E" not in text:
        text += ".0"
    return text


def canon_dumps(obj, indent: int = 2) -> str:
    """Serialise to JSON with sorted keys and round-trippable floats."""
    pieces = []
    _write(obj, pieces, indent, 0)
    return "".join(pieces) + "\n"


def _write(obj, out, indent, depth):
    pad = " " * (indent * depth)
    pad_in = " " * (indent * (depth + 1))
    if isinstance(obj, np.ndarray):
        _write(obj.tolist(), out, indent, depth)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(obj.keys())
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {type(k)}")
            out.append(f"{pad_in}{json.dumps(k)}: ")
            _write(obj[k], out, indent, depth + 1)
            out.append(",\n" if i < len(keys) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            out.append("[]")
            return
        # flat numeric rows stay on one line to keep files readable
        if all(isinstance(v, (int, float, np.integer, np.floating)) for v in seq):
            out.append("[" + ", ".join(_scalar(v) for v in seq) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(seq):
            out.append(pad_in)
            _write(v, out, indent, depth + 1)
            out.append(",\n" if i < len(seq) - 1 else "\n")
        out.append(pad + "]")
    else:
        out.append(_scalar(obj))


def _scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    if v is None:
        return "null"
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"unsupported JSON value type {type(v)}")


def write_json(path: str, obj) -> None:
    text = canon_dumps(obj)
    with open(path, "w") as fh:
        fh.write(text)


def read_json(path: str):
    if not os.path.exists(path):
        raise MissingArtifact(f"no such file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise MissingArtifact(f"malformed JSON in {path}: {exc}") from exc


def append_jsonl(path: str, obj) -> None:
    """Append one record as a single line (sorted keys, .17g floats)."""
    line = canon_dumps(obj, indent=0).replace("\n", "").rstrip()
    with open(path, "a") as fh:
        fh.write(line + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(prefix: str, params: dict, hyperparams: dict, rng_state=None) -> None:
    """Write <prefix>.json and <prefix>.bin.

    The blob stores parameters as little-endian float64 in sorted-name order,
    which matches the order the sorted-key manifest declares them in.
    """
    names = sorted(params.keys())
    shapes = {name: list(params[name].shape) for name in names}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "shapes": shapes,
        "hyperparams": hyperparams,
        "rng_state": _encode_rng(rng_state),
    }
    write_json(prefix + ".json", manifest)
    with open(prefix + ".bin", "wb") as fh:
        for name in names:
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(prefix: str):
    """Read a manifest/blob pair; returns (manifest, {name: float64 array})."""
    manifest = read_json(prefix + ".json")
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise MissingArtifact(
            f"checkpoint schema {manifest.get('schema_version')} != {SCHEMA_VERSION}"
        )
    blob_path = prefix + ".bin"
    if not os.path.exists(blob_path):
        raise MissingArtifact(f"missing parameter blob: {blob_path}")
    raw = np.fromfile(blob_path, dtype="<f8")
    params = {}
    offset = 0
    for name in sorted(manifest["shapes"].keys()):
        shape = tuple(manifest["shapes"][name])
        size = int(np.prod(shape)) if shape else 1
        if offset + size > raw.size:
            raise MissingArtifact("parameter blob shorter than manifest declares")
        params[name] = raw[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != raw.size:
        raise MissingArtifact("parameter blob longer than manifest declares")
    return manifest, params


def _encode_rng(rng_state):
    if rng_state is None:
        return None
    # PCG64 state dicts contain 128-bit integers; store them as decimal strings
    def enc(v):
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        if isinstance(v, int):
            return str(v)
        return v

    return enc(rng_state)


def decode_rng(encoded):
    if encoded is None:
        return None

    def dec(v):
        if isinstance(v, dict):
            return {k: dec(x) for k, x in v.items()}
        if isinstance(v, str) and (v.isdigit() or (v.startswith("-") and v[1:].isdigit())):
            return int(v)
        return v

    return dec(encoded)
