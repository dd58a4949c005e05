"""Plain-text parameter snapshots with exact float round-trip.

Layout::

    ttfm-snapshot 1
    [meta]
    model ttfm
    k1 8
    ...
    [param lam 200]
    0.12 -0.5 ...
    [param theta 500 8]
    <one row per line>

Section kinds are ``param`` (point values or variational means), ``scale``
(raw softplus scales) and ``mask``. Floats are written with ``repr`` so a
write/read cycle reproduces every bit. Files are written to a temporary
name and renamed, so an interrupted write never leaves a partial snapshot.
"""

import os
import tempfile

import numpy as np

from .errors import DataError

MAGIC = "ttfm-snapshot"
VERSION = 1


def _fmt_row(row):
    return " ".join(repr(float(v)) for v in row)


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(meta, sections):
    """``sections`` is a list of (kind, name, array)."""
    lines = [f"{MAGIC} {VERSION}", "[meta]"]
    for k, v in meta.items():
        lines.append(f"{k} {v}")
    for kind, name, arr in sections:
        arr = np.asarray(arr, float)
        lines.append(f"[{kind} {name} {' '.join(str(n) for n in arr.shape)}]".replace(" ]", "]"))
        if arr.size == 0:
            continue
        if arr.ndim <= 1:
            lines.append(_fmt_row(arr.ravel()))
        else:
            for row in arr.reshape(arr.shape[0], -1):
                lines.append(_fmt_row(row))
    return "\n".join(lines) + "\n"


def loads(text, source="<snapshot>"):
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise DataError(f"{source}: not a parameter snapshot")
    version = int(lines[0].split()[1])
    if version != VERSION:
        raise DataError(f"{source}: unsupported snapshot version {version}")
    meta, sections = {}, []
    n = 1
    while n < len(lines):
        line = lines[n]
        if line == "[meta]":
            n += 1
            while n < len(lines) and not lines[n].startswith("["):
                key, _, value = lines[n].partition(" ")
                meta[key] = value
                n += 1
            continue
        if not line.startswith("["):
            raise DataError(f"{source}:{n + 1}: expected a section header")
        head = line[1:-1].split()
        kind, name, shape = head[0], head[1], tuple(int(s) for s in head[2:])
        size = int(np.prod(shape)) if shape else 1
        n_rows = 0 if size == 0 else (1 if len(shape) <= 1 else shape[0])
        rows = lines[n + 1:n + 1 + n_rows]
        values = [float(v) for row in rows for v in row.split()]
        if len(values) != size:
            raise DataError(f"{source}:{n + 1}: section {name} expects {size} values, "
                            f"found {len(values)}")
        sections.append((kind, name, np.array(values, dtype=float).reshape(shape)))
        n += 1 + n_rows
    return meta, sections


def save_params(path, params, meta):
    atomic_write_text(path, dumps(meta, [("param", k, v) for k, v in params.items()]))


def load_params(path):
    with open(path) as fh:
        meta, sections = loads(fh.read(), os.fspath(path))
    return meta, {name: arr for kind, name, arr in sections if kind == "param"}


def save_posterior(path, q, meta):
    sections = [("param", k, v) for k, v in q.means.items()]
    sections += [("scale", k, v) for k, v in q.raw_scales.items()]
    sections += [("mask", k, v) for k, v in q.masks.items()]
    atomic_write_text(path, dumps(dict(meta, posterior="1"), sections))


def load_posterior(path):
    from .inference import VariationalPosterior

    with open(path) as fh:
        meta, sections = loads(fh.read(), os.fspath(path))
    by_kind = {"param": {}, "scale": {}, "mask": {}}
    for kind, name, arr in sections:
        by_kind[kind][name] = arr
    if not by_kind["scale"]:
        raise DataError(f"{path}: snapshot has no scale sections")
    return meta, VariationalPosterior(by_kind["param"], by_kind["scale"], by_kind["mask"])
