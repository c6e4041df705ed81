"""Bit-exact torus record files and family directories.

A record file is human-inspectable text (17-significant-digit decimals,
which round-trip IEEE doubles exactly) followed by a binary section
holding the grid samples verbatim, so resuming a run reproduces the
in-memory state bitwise.  A SHA-256 checksum over the header fields and
the binary payload guards against truncation and corruption.

Layout::

    torus-record 1
    <key> <value> lines (scalars %.17g, strings verbatim)
    observables <k> <v> ... in one line
    samples <m> <2n> <N>
    <text block: one line per (leg, component) with N decimals>
    binary <nbytes> sha256 <hex>
    <raw little-endian float64: K then W, shape (2, m, 2n, N)>
    end

Files are written to a temporary name and renamed into place so readers
never observe partial records.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumError, PersistenceError, SchemaError
from .fourier import CurveMap
from .observables import ObservableRecord
from .state import TorusState

__all__ = ["TorusRecord", "write_record", "read_record", "record_from_state",
           "state_from_record", "family_index", "write_index", "record_path"]

SCHEMA_VERSION = 1

_SCALAR_KEYS = ("omega", "T", "lam", "h", "err", "err_w", "alpha_used",
                "alpha_next")
_INT_KEYS = ("n", "m", "N", "seq", "parent_seq", "n_it")
_STR_KEYS = ("family", "generator", "tag")


@dataclass
class TorusRecord:
    """On-disk image of one converged torus with provenance."""

    n: int
    m: int
    N: int
    omega: float
    T: float
    lam: float
    h: float
    K: np.ndarray            # (m, 2n, N)
    W: np.ndarray            # (m, 2n, N)
    err: float = np.nan
    err_w: float = np.nan
    observables: dict = field(default_factory=dict)
    seq: int = 0
    parent_seq: int = -1
    tag: str = "-"
    family: str = "-"
    generator: str = "vertical"
    alpha_used: float = np.nan
    alpha_next: float = np.nan
    n_it: int = 0
    schema: int = SCHEMA_VERSION


def record_from_state(state: TorusState, err: float, err_w: float,
                      observables: ObservableRecord | dict | None = None,
                      **provenance) -> TorusRecord:
    obs = {}
    if observables is not None:
        obs = observables if isinstance(observables, dict) else observables.as_dict()
        obs = {k: v for k, v in obs.items()
               if isinstance(v, (int, float, np.floating, np.integer))}
    return TorusRecord(
        n=state.n, m=state.m, N=state.N, omega=state.omega, T=state.T,
        lam=state.lam, h=state.h, generator=state.generator,
        K=np.stack([c.values for c in state.K]),
        W=np.stack([c.values for c in state.W]),
        err=err, err_w=err_w, observables=obs, **provenance)


def state_from_record(rec: TorusRecord) -> TorusState:
    return TorusState(K=[CurveMap.from_samples(k) for k in rec.K],
                      W=[CurveMap.from_samples(w) for w in rec.W],
                      T=rec.T, lam=rec.lam, omega=rec.omega, h=rec.h,
                      generator=rec.generator)


def _fmt(x) -> str:
    return "%.17g" % float(x)


def _payload(rec: TorusRecord) -> bytes:
    data = np.stack([rec.K, rec.W]).astype("<f8")
    return data.tobytes()


def _digest(rec: TorusRecord, payload: bytes) -> str:
    h = hashlib.sha256()
    for key in _INT_KEYS:
        h.update(f"{key}={getattr(rec, key)};".encode())
    for key in _SCALAR_KEYS:
        h.update(f"{key}={_fmt(getattr(rec, key))};".encode())
    for key in _STR_KEYS:
        h.update(f"{key}={getattr(rec, key)};".encode())
    for k in sorted(rec.observables):
        h.update(f"{k}={_fmt(rec.observables[k])};".encode())
    h.update(payload)
    return h.hexdigest()


def write_record(rec: TorusRecord, path) -> None:
    """Write one record atomically (temp file + rename)."""
    path = os.fspath(path)
    payload = _payload(rec)
    digest = _digest(rec, payload)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        def line(s):
            fh.write((s + "\n").encode("ascii"))

        line(f"torus-record {rec.schema}")
        for key in _INT_KEYS:
            line(f"{key} {getattr(rec, key)}")
        for key in _SCALAR_KEYS:
            line(f"{key} {_fmt(getattr(rec, key))}")
        for key in _STR_KEYS:
            line(f"{key} {getattr(rec, key)}")
        obs = " ".join(f"{k} {_fmt(v)}" for k, v in sorted(rec.observables.items()))
        line(f"observables {obs}")
        line(f"samples {rec.m} {2 * rec.n} {rec.N}")
        for block in (rec.K, rec.W):
            for leg in block:
                for comp in leg:
                    line(" ".join(_fmt(v) for v in comp))
        line(f"binary {len(payload)} sha256 {digest}")
        fh.write(payload)
        line("")
        line("end")
    os.replace(tmp, path)


def read_record(path) -> TorusRecord:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        def line():
            raw = fh.readline()
            if not raw:
                raise SchemaError(f"{path}: truncated record")
            return raw.decode("ascii").rstrip("\n")

        head = line().split()
        if head[:1] != ["torus-record"]:
            raise SchemaError(f"{path}: not a torus record")
        if int(head[1]) != SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported schema version {head[1]}")
        fields: dict = {"schema": int(head[1])}
        for key in _INT_KEYS:
            k, v = line().split()
            if k != key:
                raise SchemaError(f"{path}: expected key {key}, got {k}")
            fields[key] = int(v)
        for key in _SCALAR_KEYS:
            k, v = line().split()
            if k != key:
                raise SchemaError(f"{path}: expected key {key}, got {k}")
            fields[key] = float(v)
        for key in _STR_KEYS:
            k, v = line().split(maxsplit=1)
            fields[key] = v
        obs_tokens = line().split()[1:]
        fields["observables"] = {obs_tokens[i]: float(obs_tokens[i + 1])
                                 for i in range(0, len(obs_tokens), 2)}
        m, dim, N = (int(x) for x in line().split()[1:])
        n_text = 2 * m * dim
        for _ in range(n_text):
            line()
        btok = line().split()
        nbytes = int(btok[1])
        stored_digest = btok[3]
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise SchemaError(f"{path}: truncated binary payload")
        trailer = fh.read().decode("ascii").strip()
        if trailer != "end":
            raise SchemaError(f"{path}: missing end marker")

    data = np.frombuffer(payload, dtype="<f8").reshape(2, m, dim, N).copy()
    rec = TorusRecord(K=data[0], W=data[1], **fields)
    if rec.n != dim // 2 or rec.m != m or rec.N != N:
        raise SchemaError(f"{path}: sample counts disagree with the header")
    if _digest(rec, payload) != stored_digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    return rec


def record_path(directory, seq: int) -> str:
    return os.path.join(os.fspath(directory), f"torus_{seq:06d}.tor")


def family_index(directory) -> list[TorusRecord]:
    """Read all records of a family directory, ordered by sequence number.

    Records must agree on the family tag; headers only are validated
    cheaply by fully reading each record.
    """
    directory = os.fspath(directory)
    names = sorted(f for f in os.listdir(directory) if f.endswith(".tor"))
    records = [read_record(os.path.join(directory, f)) for f in names]
    records.sort(key=lambda r: r.seq)
    families = {r.family for r in records}
    if len(families) > 1:
        raise PersistenceError(
            f"{directory}: mixed families in one directory: {sorted(families)}")
    return records


INDEX_COLUMNS = ("seq", "h", "T", "omega", "multiplier_unstable", "C1", "C2",
                 "N", "err")


def write_index(directory, records=None) -> str:
    """Write the machine-readable family index (one line per torus)."""
    directory = os.fspath(directory)
    if records is None:
        records = family_index(directory)
    path = os.path.join(directory, "index.tsv")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("\t".join(INDEX_COLUMNS) + "\n")
        for r in records:
            row = [str(r.seq)]
            row += ["%.17g" % v for v in (r.h, r.T, r.omega)]
            row += ["%.17g" % r.observables.get("multiplier_unstable", np.nan)]
            row += ["%.17g" % r.observables.get("C1", np.nan)]
            row += ["%.17g" % r.observables.get("C2", np.nan)]
            row += [str(r.N), "%.3e" % r.err]
            fh.write("\t".join(row) + "\n")
    os.replace(tmp, path)
    return path
