"""JSON input files and CSV/JSON outputs.

Input files are JSON objects with a ``"schema_version"`` of 1 and a
``"kind"`` of ``"class"``, ``"cb"``, ``"mdp"`` or ``"scenario"``. Mass tables
are nested lists in index order; see the README for the full schema.
"""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .env import CBEnv, TabularMDP
from .func_class import CondDistTable, FiniteClass

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def _check(obj: dict, kind: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError("top level must be a JSON object")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {obj.get('schema_version')!r}")
    if obj.get("kind") != kind:
        raise SchemaError(f"expected kind {kind!r}, got {obj.get('kind')!r}")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def class_from_dict(obj: dict) -> FiniteClass:
    _check(obj, "class")
    steps = obj["members"]
    if steps and isinstance(steps[0], dict):
        steps = [steps]
    members = [[CondDistTable(m["masses"], id=m.get("id", f"h{h}_{i}")) for i, m in enumerate(step)]
               for h, step in enumerate(steps)]
    cls = FiniteClass(members, state_ids=obj.get("states"), action_ids=obj.get("actions"))
    if "grid_size" in obj and obj["grid_size"] != cls.grid_size:
        raise SchemaError(f"grid_size {obj['grid_size']} does not match the mass tables ({cls.grid_size})")
    return cls


def class_to_dict(cls: FiniteClass) -> dict:
    return {
        "schema_version": SCHEMA_VERSION, "kind": "class", "grid_size": cls.grid_size,
        "states": cls.state_ids, "actions": cls.action_ids,
        "members": [[{"id": f.id, "masses": f.masses.tolist()} for f in step] for step in cls.members],
    }


def cb_from_dict(obj: dict) -> CBEnv:
    _check(obj, "cb")
    return CBEnv(obj["cost"], context_dist=obj.get("context_dist"), context_sequence=obj.get("context_sequence"),
                 state_ids=obj.get("states"), action_ids=obj.get("actions"))


def cb_to_dict(env: CBEnv) -> dict:
    return {
        "schema_version": SCHEMA_VERSION, "kind": "cb", "grid_size": env.grid_size,
        "states": env.state_ids, "actions": env.action_ids, "cost": env.C.tolist(),
        "context_dist": None if env.context_dist is None else env.context_dist.tolist(),
        "context_sequence": env.context_sequence,
    }


def mdp_from_dict(obj: dict) -> TabularMDP:
    _check(obj, "mdp")
    return TabularMDP(obj["transition"], obj["cost"], initial_dist=obj.get("initial_dist"),
                      initial_sequence=obj.get("initial_sequence"),
                      state_ids=obj.get("states"), action_ids=obj.get("actions"))


def mdp_to_dict(mdp: TabularMDP) -> dict:
    return {
        "schema_version": SCHEMA_VERSION, "kind": "mdp", "grid_size": mdp.grid_size, "horizon": mdp.horizon,
        "states": mdp.state_ids, "actions": mdp.action_ids,
        "transition": mdp.P.tolist(), "cost": mdp.C.tolist(),
        "initial_dist": None if mdp.initial_dist is None else mdp.initial_dist.tolist(),
        "initial_sequence": mdp.initial_sequence,
    }


def load_class(path) -> FiniteClass:
    return class_from_dict(read_json(path))


def load_cb(path) -> CBEnv:
    return cb_from_dict(read_json(path))


def load_mdp(path) -> TabularMDP:
    return mdp_from_dict(read_json(path))


# -- outputs ----------------------------------------------------------------------

def output_dir(cli_value: str | None = None, default: str = "distrl_out") -> Path:
    """``--out`` wins, then ``DISTRL_OUTPUT_DIR``, then ``default``."""
    return Path(cli_value or os.environ.get("DISTRL_OUTPUT_DIR") or default)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    return obj


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION, **jsonable(obj)}
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
