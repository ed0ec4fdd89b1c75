"""Plain-text persistence for datasets, adjacency matrices and checkpoints.

Every file starts with a ``schema=1`` header line. Floats are written with
``repr`` (shortest round-tripping form), so load(save(x)) is bit-exact.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .epidemic import EpidemicDataset, PathogenParams
from .errors import ParseError
from .graphgen import MobilityNetwork

SCHEMA = 1
HEADER = f"schema={SCHEMA}"


def _write(path, body: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(HEADER + "\n" + body, encoding="utf-8")
        tmp.replace(path)  # never leave a half-written file behind
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _read(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=str(path)) from None
    head, _, body = text.partition("\n")
    if head.strip() != HEADER:
        raise ParseError(f"expected header {HEADER!r}, got {head.strip()!r}", path=str(path))
    return body


def _array_out(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _array_in(d):
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


# --- adjacency ----------------------------------------------------------

def save_adjacency(path, A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("adjacency must be a 2-D array")
    rows = "\n".join(",".join(repr(float(x)) for x in row) for row in A)
    return _write(path, rows + "\n")


def load_adjacency(path):
    body = _read(path)
    try:
        rows = [[float(x) for x in r] for r in csv.reader(body.splitlines()) if r]
        A = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad adjacency entry: {exc}", path=str(path)) from None
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParseError("adjacency is not square", path=str(path), shape=A.shape)
    return A


# --- datasets -----------------------------------------------------------

def dataset_to_dict(ds: EpidemicDataset):
    n, k, T = ds.delta_S.shape
    out = {
        "kind": "dataset",
        "n": n, "k": k, "T": T,
        "delta_S": ds.delta_S.ravel().tolist(),
        "params_truth": [vars(p).copy() for p in ds.params_truth],
        "graph_spec": ds.graph_spec,
        "use_approx": ds.use_approx,
        "network": None,
    }
    net = ds.network_truth
    if net is not None:
        out["network"] = {"A": _array_out(net.A), "P": _array_out(net.P), "labels": list(net.labels),
                          "directed": net.directed, "weighted": net.weighted}
    return out


def dataset_from_dict(d):
    if d.get("kind") != "dataset":
        raise ParseError("not a dataset document")
    n, k, T = int(d["n"]), int(d["k"]), int(d["T"])
    values = d["delta_S"]
    if len(values) != n * k * T:
        raise ParseError("delta_S length does not match n*k*T", expected=n * k * T, got=len(values))
    net = None
    if d.get("network"):
        nd = d["network"]
        net = MobilityNetwork(A=_array_in(nd["A"]), P=_array_in(nd["P"]), labels=list(nd["labels"]),
                              directed=bool(nd["directed"]), weighted=bool(nd["weighted"]))
    return EpidemicDataset(
        delta_S=np.array(values, dtype=np.float64).reshape(n, k, T),
        params_truth=[PathogenParams(**p) for p in d.get("params_truth", [])],
        network_truth=net,
        graph_spec=dict(d.get("graph_spec") or {}),
        use_approx=bool(d.get("use_approx", True)),
    )


def save_dataset(path, ds: EpidemicDataset):
    return _write(path, json.dumps(dataset_to_dict(ds)) + "\n")


def load_dataset(path) -> EpidemicDataset:
    body = _read(path)
    try:
        d = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(f"dataset is not valid JSON: {exc}", path=str(path)) from None
    return dataset_from_dict(d)


# --- checkpoints --------------------------------------------------------

def save_checkpoint(path, params: dict, config: dict):
    doc = {"kind": "checkpoint", "config": config,
           "params": {name: _array_out(v) for name, v in params.items()}}
    return _write(path, json.dumps(doc) + "\n")


def load_checkpoint(path):
    """Returns ``(params, config)``."""
    try:
        doc = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}", path=str(path)) from None
    if doc.get("kind") != "checkpoint":
        raise ParseError("not a checkpoint document", path=str(path))
    return {name: _array_in(v) for name, v in doc["params"].items()}, doc["config"]
