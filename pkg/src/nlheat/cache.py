"""Versioned JSON cache for expensive radial profiles.

Layout: one file per entry under the cache directory (environment variable
NLHEAT_CACHE overrides the default ./.nlheat_cache).  Every entry stores a
format version, the generating configuration, the payload arrays at full
precision, and a sha256 checksum of the canonical payload text; a checksum
mismatch raises CacheCorrupt rather than returning silently wrong numbers.
"""

import hashlib
import json
import os

import numpy as np

CACHE_VERSION = 2


class CacheCorrupt(RuntimeError):
    """Cache file failed its checksum or version check."""


def cache_dir():
    d = os.environ.get("NLHEAT_CACHE", os.path.join(os.getcwd(), ".nlheat_cache"))
    os.makedirs(d, exist_ok=True)
    return d


def _canonical(obj):
    """Deterministic text form; floats via repr (shortest round-trip)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_key(config):
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]


def _encode(payload):
    out = {}
    for k, v in payload.items():
        if isinstance(v, np.ndarray):
            out[k] = {"__array__": v.tolist()}
        else:
            out[k] = v
    return out


def _decode(payload):
    out = {}
    for k, v in payload.items():
        if isinstance(v, dict) and "__array__" in v:
            out[k] = np.asarray(v["__array__"], dtype=float)
        else:
            out[k] = v
    return out


def save(name, config, payload):
    """Write an entry; returns the file path."""
    body = _encode(payload)
    text = _canonical(body)
    doc = {
        "version": CACHE_VERSION,
        "config": config,
        "checksum": hashlib.sha256(text.encode()).hexdigest(),
        "payload": body,
    }
    path = os.path.join(cache_dir(), f"{name}-{config_key(config)}.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    os.replace(tmp, path)
    return path


def load(name, config):
    """Return the decoded payload, or None when absent/outdated version."""
    path = os.path.join(cache_dir(), f"{name}-{config_key(config)}.json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CacheCorrupt(f"{path}: not valid JSON") from exc
    if doc.get("version") != CACHE_VERSION:
        return None
    body = doc.get("payload", {})
    if hashlib.sha256(_canonical(body).encode()).hexdigest() != doc.get("checksum"):
        raise CacheCorrupt(f"{path}: checksum mismatch")
    return _decode(body)
