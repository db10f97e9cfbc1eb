"""Built-in deterministic models-under-test and their truth store.

A truth directory maps the digest of a 2D observable to the 3D volume that
produced it::

    index.json          {"raw": <digest>, "entries": {<digest>: {"name": ..., "index": k}}}
    vol_<digest>.json/.bin
    invocations.log     one "<digest> <kind>" line per fixture call

Index 0 is the unperturbed observable; scan points are numbered from 1.
Fixture behaviour for an input with digest ``h``:

``oracle``    the volume stored for ``h``
``frozen``    the raw volume, whatever the input
``signflip``  the stored volume for odd indices, and ``2 * raw - truth``
              (the physical response reflected about the raw prediction)
              for even indices; for ``f > 2`` the reflection can go negative,
              in which case the fixture process fails
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, Optional

from .errors import ToolkitError
from .field import ScalarField, load_field, store_field

FIXTURE_KINDS = ("oracle", "frozen", "signflip")


class TruthStore:
    """Collects (observable, volume) pairs and writes them to a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.raw: Optional[str] = None
        self.entries: Dict[str, dict] = {}

    def register(self, observable: ScalarField, volume: ScalarField, index: int) -> str:
        digest = observable.digest()
        if digest in self.entries:
            # identical observables must map to one truth; keep the first
            return digest
        name = f"vol_{digest[:32]}"
        self.directory.mkdir(parents=True, exist_ok=True)
        store_field(volume, self.directory / name)
        self.entries[digest] = {"name": name, "index": int(index)}
        if index == 0:
            self.raw = digest
        return digest

    def save(self) -> None:
        if self.raw is None:
            raise ToolkitError("MISSING_TRUTH", "no raw (index 0) volume registered")
        payload = {"raw": self.raw, "entries": self.entries}
        tmp = self.directory / "index.json.tmp"
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.directory / "index.json")


def read_index(truth_dir) -> dict:
    path = Path(truth_dir) / "index.json"
    if not path.is_file():
        raise ToolkitError("MISSING_TRUTH", f"no truth index at {path}")
    try:
        return json.loads(path.read_text())
    except ValueError as exc:
        raise ToolkitError("MISSING_TRUTH", f"unreadable truth index {path}: {exc}") from exc


def fixture_response(kind: str, truth_dir, observable: ScalarField) -> ScalarField:
    """Volume the fixture ``kind`` returns for ``observable``."""
    if kind not in FIXTURE_KINDS:
        raise ToolkitError("BAD_PARAMS", f"unknown fixture kind {kind!r}")
    truth_dir = Path(truth_dir)
    index = read_index(truth_dir)
    digest = observable.digest()
    with open(truth_dir / "invocations.log", "a") as log:
        log.write(f"{digest} {kind}\n")
    entries = index["entries"]
    if kind == "frozen":
        return load_field(truth_dir / entries[index["raw"]]["name"])
    if digest not in entries:
        raise ToolkitError("MISSING_TRUTH", f"no truth volume for observable {digest[:16]}")
    entry = entries[digest]
    truth = load_field(truth_dir / entry["name"])
    if kind == "oracle" or entry["index"] == 0 or entry["index"] % 2 == 1:
        return truth
    raw = load_field(truth_dir / entries[index["raw"]]["name"])
    reflected = 2.0 * raw.data - truth.data
    return truth.with_data(reflected)


def invocation_counts(truth_dir) -> Dict[str, int]:
    """Number of fixture calls per observable digest."""
    path = Path(truth_dir) / "invocations.log"
    counts: Dict[str, int] = {}
    if not path.is_file():
        return counts
    for line in path.read_text().splitlines():
        if line.strip():
            digest = line.split()[0]
            counts[digest] = counts.get(digest, 0) + 1
    return counts


def run_fixture(kind: str, truth_dir, input_prefix, output_prefix) -> None:
    """Fixture process body: read the observable, write the response volume."""
    observable = load_field(input_prefix)
    store_field(fixture_response(kind, truth_dir, observable), output_prefix)
