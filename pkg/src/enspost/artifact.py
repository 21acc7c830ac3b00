"""Versioned model files.

An artifact is a UTF-8 JSON document::

    {"format_version": 1, "family": "<model name>", "feature_spec": [...],
     "payload": {...}}

Arrays anywhere in the payload are stored as objects
``{"__ndarray__": dtype, "shape": [...], "data": base64(zlib(bytes))}`` in
little-endian byte order, and Python floats are written with ``repr``
precision, so a save/load cycle reproduces every value bit for bit.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
import zlib

import numpy as np

from .errors import ArtifactFormatError, IoError
from .models import REGISTRY, Model

FORMAT_VERSION = 1


def _encode(obj):
    if isinstance(obj, np.ndarray):
        a = np.ascontiguousarray(obj)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        raw = a.astype(dt, copy=False).tobytes()
        return {"__ndarray__": dt.str, "shape": list(a.shape),
                "data": base64.b64encode(zlib.compress(raw, 6)).decode("ascii")}
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            raw = zlib.decompress(base64.b64decode(obj["data"]))
            a = np.frombuffer(raw, dtype=np.dtype(obj["__ndarray__"])).reshape(obj["shape"])
            return a.astype(a.dtype.newbyteorder("="), copy=True)
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def to_document(model: Model) -> dict:
    return {"format_version": FORMAT_VERSION, "family": model.name,
            "feature_spec": list(model.features), "payload": _encode(model.payload())}


def from_document(doc: dict) -> Model:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ArtifactFormatError("not a model artifact (no format_version)")
    if doc["format_version"] != FORMAT_VERSION:
        raise ArtifactFormatError(f"artifact format {doc['format_version']!r} is not supported "
                                  f"(expected {FORMAT_VERSION})")
    family = doc.get("family")
    if family not in REGISTRY:
        raise ArtifactFormatError(f"unknown model family {family!r}")
    try:
        return REGISTRY[family].from_payload(_decode(doc["payload"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactFormatError(f"malformed {family} payload: {exc}") from exc


def save(model: Model, path) -> None:
    """Write atomically (temporary file in the target directory, then rename)."""
    text = json.dumps(to_document(model), allow_nan=True)
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactFormatError(f"{path} is not valid JSON: {exc}") from exc
    return from_document(doc)
