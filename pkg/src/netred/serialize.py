"""Model file formats, CSV emission, checksums and run manifests.

All files are UTF-8 JSON or CSV.  Writers are atomic (temp file plus
rename) and canonical, so serialize -> parse -> serialize is
byte-identical and identical inputs yield identical artifacts.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .network import NetworkSystem, ReducedNetwork, ReducedOrders, Topology

__all__ = [
    "system_to_dict",
    "system_from_dict",
    "reduced_to_dict",
    "reduced_from_dict",
    "load_system",
    "load_reduced",
    "dump_json",
    "write_csv",
    "atomic_write",
    "sha256_file",
    "RunManifest",
]


def _matrix(rows):
    return np.array(rows, dtype=float)


def system_to_dict(sys):
    """JSON document of a network system (1-based neighbor indices)."""
    top = sys.topology
    doc = {
        "N": top.n_subsystems,
        "sizes": list(top.sizes),
        "state_neighbors": [sorted(s) for s in top.state_neighbors],
        "m": top.m,
        "p": top.p,
        "A": sys.a.tolist(),
        "B": sys.b.tolist(),
        "C": sys.c.tolist(),
    }
    if top.input_neighbors is not None:
        doc["input_neighbors"] = [sorted(s) for s in top.input_neighbors]
        doc["input_sizes"] = list(top.input_sizes)
    return doc


def system_from_dict(doc):
    try:
        top = Topology(
            sizes=tuple(doc["sizes"]),
            state_neighbors=tuple(frozenset(s) for s in doc["state_neighbors"]),
            m=int(doc["m"]),
            p=int(doc["p"]),
            input_neighbors=(
                tuple(frozenset(s) for s in doc["input_neighbors"])
                if doc.get("input_neighbors") is not None
                else None
            ),
            input_sizes=(
                tuple(doc["input_sizes"]) if doc.get("input_sizes") is not None else None
            ),
        )
        return NetworkSystem(
            a=_matrix(doc["A"]), b=_matrix(doc["B"]), c=_matrix(doc["C"]), topology=top
        )
    except KeyError as exc:
        raise DimensionError(f"system document is missing field {exc}") from exc


def reduced_to_dict(red, h2_error=None, constraint_report=None):
    doc = {
        "orders": list(red.orders.orders),
        "S": red.s.tolist(),
        "G": red.g.tolist(),
        "L": red.l.tolist(),
        "H": red.h.tolist(),
        "h2_error": h2_error,
        "constraint_report": constraint_report,
    }
    return doc


def reduced_from_dict(doc, topology):
    """Reduced model from its document; the tableau is left unresolved."""
    try:
        orders = ReducedOrders(tuple(doc["orders"]))
        red = ReducedNetwork(
            s=_matrix(doc["S"]),
            g=_matrix(doc["G"]),
            l=_matrix(doc["L"]),
            h=_matrix(doc["H"]),
            orders=orders,
            topology=topology,
            pi=None,
        )
    except KeyError as exc:
        raise DimensionError(f"reduced-model document is missing field {exc}") from exc
    return red, doc.get("h2_error"), doc.get("constraint_report")


def load_system(path):
    with open(path, "r", encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))


def load_reduced(path, topology):
    with open(path, "r", encoding="utf-8") as fh:
        return reduced_from_dict(json.load(fh), topology)


def atomic_write(path, data):
    """Write bytes/text to ``path`` via a temp file in the same directory."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".netred-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(path, doc):
    atomic_write(path, json.dumps(doc, indent=1) + "\n")


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    """CSV with ',' separator, '.' decimal point and a header row."""
    lines = [",".join(header)]
    lines.extend(",".join(_csv_cell(v) for v in row) for row in rows)
    atomic_write(path, "\n".join(lines) + "\n")


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Reproducibility record written next to every output artifact."""

    command: str
    parameters: dict
    seed: object = None
    tool_version: str = ""
    input_checksums: dict = field(default_factory=dict)
    wall_seconds: float = None
    status: str = "ok"
    constraint_summary: dict = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "input_checksums": self.input_checksums,
            "wall_seconds": self.wall_seconds,
            "status": self.status,
            "constraint_summary": self.constraint_summary,
            "notes": list(self.notes),
        }

    def write_alongside(self, artifact_path):
        dump_json(str(artifact_path) + ".manifest.json", self.to_dict())
