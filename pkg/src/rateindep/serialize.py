"""File formats: trajectory CSV and structured JSON reports.

Floats are written with 17 significant digits so a write/read round trip
reproduces every state bit for bit.  Trajectory files carry their scheme
metadata in '# key=value' comment lines ahead of the header row.
"""
from __future__ import annotations

import json
from dataclasses import asdict, is_dataclass

import numpy as np

from .model import BVTrajectory, DiscreteTrajectory, JumpRecord

_F = "%.17g"


def _fmt(x: float) -> str:
    return _F % float(x)


def write_trajectory(path, traj: DiscreteTrajectory, model=None, dissipation=None) -> None:
    """Write one row per node: index, t, state components, step cost, energy."""
    dim = traj.states.shape[1]
    lines = [
        f"# scheme={traj.scheme_tag}",
        f"# eps={_fmt(traj.eps)}",
        f"# tau={_fmt(traj.tau)}",
        f"# dim={dim}",
    ]
    header = ["index", "t"] + [f"x{i}" for i in range(dim)] + ["psi_step", "energy"]
    lines.append(",".join(header))
    inc = np.diff(traj.states, axis=0)
    for i, (t, x) in enumerate(zip(traj.times, traj.states)):
        psi_step = 0.0
        if i > 0 and dissipation is not None:
            psi_step = float(dissipation.psi(inc[i - 1]))
        energy = float(model.energy(float(t), x)) if model is not None else 0.0
        row = [str(i), _fmt(t)] + [_fmt(v) for v in x] + [_fmt(psi_step), _fmt(energy)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory(path) -> tuple[DiscreteTrajectory, dict]:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line.lstrip("# ").partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line.startswith("index"):
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValueError(f"no trajectory rows in {path}")
    data = np.asarray(rows, dtype=float)
    dim = int(meta.get("dim", data.shape[1] - 4))
    times = data[:, 1]
    states = data[:, 2:2 + dim]
    traj = DiscreteTrajectory(times, states, meta.get("scheme", "eps-neighborhood"),
                              eps=float(meta.get("eps", 0.0)), tau=float(meta.get("tau", 0.0)))
    return traj, meta


def _to_plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if is_dataclass(obj) and not isinstance(obj, type):
        return _to_plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_to_plain(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bv(path, bv: BVTrajectory) -> None:
    payload = {
        "sample_times": bv.sample_times,
        "values": bv.values,
        "var_bound": bv.var_bound,
        "jumps": [
            {"t": j.t, "left": j.left, "at": j.at, "right": j.right}
            for j in bv.jumps
        ],
    }
    write_json(path, payload)


def read_bv(path) -> BVTrajectory:
    with open(path) as fh:
        doc = json.load(fh)
    jumps = tuple(
        JumpRecord(t=float(j["t"]), left=np.asarray(j["left"], dtype=float),
                   at=np.asarray(j["at"], dtype=float), right=np.asarray(j["right"], dtype=float))
        for j in doc.get("jumps", [])
    )
    return BVTrajectory(np.asarray(doc["sample_times"], dtype=float),
                        np.asarray(doc["values"], dtype=float),
                        jumps, var_bound=float(doc.get("var_bound", 0.0)))
