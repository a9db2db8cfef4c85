"""File formats: JSON-lines corpora, a sectioned binary container for models
and policies, and CSV/JSON metrics.

Container layout::

    magic    8 bytes  b"CPSRBOX\\0"
    version  uint32 little endian
    hlen     uint64 little endian
    header   hlen bytes of UTF-8 JSON (sorted keys)
    payload  concatenated little-endian array sections

The header lists each section's name, dtype, shape, offset and size, and
carries ``content_hash``: SHA-256 over the payload and the header fields
other than ``volatile`` (which holds timings).
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from typing import Iterable, Sequence

import numpy as np

from .domains.base import Trajectory
from .extra_trees import Ensemble
from .learner import CpsrModel, LearnerConfig
from .linalg import SvdFactors
from .planner import PlannerConfig, QPolicy

MAGIC = b"CPSRBOX\0"
FORMAT_VERSION = 1
CORPUS_HEADER_KEY = "_header"


class FormatError(OSError):
    """A file is truncated, corrupted or of the wrong kind."""


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def config_hash(obj) -> str:
    return hashlib.sha256(_canonical(obj)).hexdigest()[:16]


# ---------------------------------------------------------------------------
# container


def write_container(path: str, kind: str, header: dict, sections: dict,
                    volatile: dict | None = None) -> str:
    """Write a container; returns its content hash."""
    table, blobs, off = [], [], 0
    for name in sorted(sections):
        arr = np.ascontiguousarray(sections[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": off, "nbytes": len(raw)})
        blobs.append(raw)
        off += len(raw)
    payload = b"".join(blobs)
    head = {"kind": kind, "format_version": FORMAT_VERSION, "sections": table, **header}
    digest = hashlib.sha256(_canonical(head) + payload).hexdigest()
    head["content_hash"] = digest
    head["volatile"] = volatile or {}
    hbytes = _canonical(head)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    return digest


def read_container(path: str, kind: str | None = None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: not a model/policy container (bad magic)")
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version > FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version} is newer than {FORMAT_VERSION}")
    try:
        head = json.loads(data[20:20 + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupted header") from exc
    if kind is not None and head.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} file, found {head.get('kind')}")
    payload = data[20 + hlen:]
    check = {k: v for k, v in head.items() if k not in ("content_hash", "volatile")}
    if hashlib.sha256(_canonical(check) + payload).hexdigest() != head.get("content_hash"):
        raise FormatError(f"{path}: content hash mismatch")
    sections = {}
    for s in head["sections"]:
        raw = payload[s["offset"]:s["offset"] + s["nbytes"]]
        sections[s["name"]] = np.frombuffer(raw, dtype=np.dtype(s["dtype"])).reshape(s["shape"]).copy()
    return head, sections


# ---------------------------------------------------------------------------
# models and policies


def save_model(path: str, model: CpsrModel, volatile: dict | None = None) -> str:
    keys = sorted(model.c_ao)
    d = model.dim
    ops = np.stack([model.c_ao[k] for k in keys]) if keys else np.zeros((0, d, d))
    sections = {
        "c_start": model.c_start, "c_inf": model.c_inf, "c_star": model.c_star,
        "svd_u": model.svd.u, "svd_s": model.svd.s, "svd_v": model.svd.v,
        "sigma_H": model.sigma_H,
        "ao_keys": np.array(keys, np.int64).reshape(-1, 2), "ao_ops": ops,
    }
    cfg = model.config
    header = {
        "model_kind": model.kind, "config": cfg.to_dict(), "scale": model.scale,
        "n_trajectories": model.n_trajectories, "meta": model.meta,
        "projections": {"test": cfg.test_spec.to_dict(), "history": cfg.history_spec.to_dict()},
    }
    return write_container(path, "model", header, sections, volatile)


def load_model(path: str) -> tuple[CpsrModel, dict]:
    head, s = read_container(path, "model")
    cfg = LearnerConfig.from_dict(head["config"])
    c_ao = {(int(a), int(o)): s["ao_ops"][i] for i, (a, o) in enumerate(s["ao_keys"])}
    model = CpsrModel(s["c_start"], s["c_inf"], c_ao, s["c_star"],
                      SvdFactors(s["svd_u"], s["svd_s"], s["svd_v"]), cfg, s["sigma_H"],
                      float(head["scale"]), head["model_kind"], int(head["n_trajectories"]),
                      dict(head.get("meta", {})))
    return model, head


def save_policy(path: str, policy: QPolicy, agent: str, planner_cfg: PlannerConfig | None,
                model_hash: str | None, volatile: dict | None = None) -> str:
    sections = {}
    for a, e in enumerate(policy.ensembles):
        for k, v in e.to_arrays().items():
            sections[f"a{a}/{k}"] = np.asarray(v)
    header = {"agent": agent, "n_actions": policy.n_actions, "n_features": policy.n_features,
              "tie_break": "lowest-action", "model_hash": model_hash,
              "planner": planner_cfg.to_dict() if planner_cfg else None,
              "meta": policy.meta}
    return write_container(path, "policy", header, sections, volatile)


def load_policy(path: str) -> tuple[QPolicy, dict]:
    head, s = read_container(path, "policy")
    ens = []
    for a in range(head["n_actions"]):
        ens.append(Ensemble.from_arrays({k.split("/", 1)[1]: v for k, v in s.items()
                                         if k.startswith(f"a{a}/")}))
    return QPolicy(tuple(ens), int(head["n_features"]), dict(head.get("meta", {}))), head


# ---------------------------------------------------------------------------
# corpora


def write_corpus(path: str, trajs: Sequence[Trajectory], config: dict) -> str:
    lines = [json.dumps(z.to_record(), separators=(",", ":")) for z in trajs]
    body = ("\n".join(lines) + "\n").encode() if lines else b""
    digest = hashlib.sha256(body).hexdigest()
    head = json.dumps({CORPUS_HEADER_KEY: {"config": config, "content_hash": digest,
                                           "episodes": len(lines)}},
                      sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(head.encode() + b"\n")
        fh.write(body)
    return digest


def read_corpus(path: str) -> tuple[list[Trajectory], dict]:
    trajs, header = [], {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: invalid record") from exc
            if CORPUS_HEADER_KEY in rec:
                header = rec[CORPUS_HEADER_KEY]
                continue
            try:
                trajs.append(Trajectory.from_record(rec))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{path}:{n}: malformed trajectory ({exc})") from exc
    return trajs, header


# ---------------------------------------------------------------------------
# metrics


def write_metrics(csv_path: str, rows: Iterable[dict], summary: dict) -> None:
    """CSV with a header row plus a JSON file (same stem) mirroring it."""
    rows = list(rows)
    fields = list(rows[0].keys()) if rows else []
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    stem = os.path.splitext(csv_path)[0]
    with open(stem + ".json", "w") as fh:
        json.dump({**summary, "rows": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")
