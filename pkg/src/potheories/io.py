"""Persistence: line-delimited JSON event logs, npz snapshots, CSV exports.

Event log layout (version 1): the first line is a header object

    {"format": "potheories-events", "version": 1, "seed": ..., "run_index": ...,
     "grid": {...}, "params": {"lam": ..., "sigma": ...}}

followed by one object per collapse, in time order,

    {"t": <time>, "x": [<coordinates of the center>], "i": <0-based particle label>}.
"""
from __future__ import annotations

import csv
import json

import numpy as np

from .core import GridSpec, GrwParams, build_grid
from .errors import BadArgument

EVENT_FORMAT = "potheories-events"
EVENT_VERSION = 1


def grid_to_dict(grid: GridSpec) -> dict:
    return {"n_particles": grid.n_particles, "dims": grid.dims, "points_per_dim": grid.points_per_dim,
            "spacing": grid.spacing, "masses": list(grid.masses),
            "charges": None if grid.charges is None else list(grid.charges)}


def grid_from_dict(d: dict) -> GridSpec:
    return build_grid(d["n_particles"], d["dims"], d["points_per_dim"], d["spacing"], d["masses"],
                      d.get("charges"))


def _event_rows(times, centers, labels, spacing):
    for t, x, i in zip(times, centers, labels):
        yield {"t": float(t), "x": [float(v) * spacing for v in np.atleast_1d(x)], "i": int(i)}


def _maybe_int(v):
    return None if v is None else int(v)


def write_event_log(obj, path):
    """Write a TrajectoryRecord or FlashSet as a versioned line-delimited JSON log."""
    grid = obj.grid
    header = {"format": EVENT_FORMAT, "version": EVENT_VERSION, "grid": grid_to_dict(grid),
              "seed": _maybe_int(getattr(obj, "seed", None)),
              "run_index": _maybe_int(getattr(obj, "run_index", None))}
    params = getattr(obj, "params", None)
    if params is not None:
        header["params"] = {"lam": params.lam, "sigma": params.sigma}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in _event_rows(obj.times, obj.centers, obj.labels, grid.spacing):
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_event_log(path):
    """(header, times, centers as site indices (K, d), labels)."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise BadArgument(f"{path}: empty event log")
    header = json.loads(lines[0])
    if header.get("format") != EVENT_FORMAT or header.get("version") != EVENT_VERSION:
        raise BadArgument(f"{path}: not a version-{EVENT_VERSION} event log")
    grid = grid_from_dict(header["grid"])
    rows = [json.loads(ln) for ln in lines[1:]]
    times = np.array([r["t"] for r in rows], dtype=float)
    centers = np.rint(np.array([r["x"] for r in rows], dtype=float).reshape(-1, grid.dims)
                      / grid.spacing).astype(int)
    labels = np.array([r["i"] for r in rows], dtype=int)
    header["grid"] = grid
    if "params" in header:
        header["params"] = GrwParams(**header["params"])
    return header, times, centers, labels


def save_snapshots(record, path):
    """Wave functions (or density matrices) at the record's snapshot times, as npz."""
    ts = sorted(record.snapshots)
    arrays = {}
    for k, t in enumerate(ts):
        s = record.snapshots[t]
        arrays[f"state_{k}"] = s.amplitudes if hasattr(s, "amplitudes") else s.entries
    np.savez(path, times=np.array(ts, dtype=float), **arrays)


def load_snapshots(path) -> dict:
    with np.load(path) as data:
        ts = data["times"]
        return {float(t): data[f"state_{k}"] for k, t in enumerate(ts)}


def write_matter_csv(fields, path):
    """Rows t, one index column per configuration axis of a single particle, value."""
    fields = list(fields)
    if not fields:
        raise BadArgument("no matter fields to write")
    dims = fields[0].grid.dims
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{k}" for k in range(dims)] + ["value"])
        for f in fields:
            for idx in np.ndindex(*f.values.shape):
                w.writerow([repr(float(f.t))] + list(idx) + [repr(float(f.values[idx]))])


def write_path_csv(path_obj, path, run_id=0):
    """Rows run, t, particle, coordinates, flag (node flag of the interval ending at t)."""
    grid = path_obj.grid
    flags = np.concatenate([[False], np.asarray(path_obj.node_flags, dtype=bool)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "t", "particle"] + [f"q{k}" for k in range(grid.dims)] + ["flag"])
        for k, t in enumerate(path_obj.times):
            for i in range(grid.n_particles):
                w.writerow([run_id, repr(float(t)), i]
                           + [repr(float(v)) for v in path_obj.positions[k, i]] + [int(flags[k])])


def write_outcomes_csv(rows, path):
    """``rows``: iterables of (run_id, seed, time, label, flags)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "t", "label", "flags"])
        for r in rows:
            w.writerow(list(r))
