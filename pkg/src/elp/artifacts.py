"""Stage artifacts under ``out/<stage>/<hash>/`` indexed by one ``manifest.json``."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .ingest import Annotation, Channel, EcgRecord

# stage -> stages it reads
STAGE_INPUTS = {
    "ingest": (),
    "detect": ("ingest",),
    "segment": ("ingest", "detect"),
    "build-vocab": ("segment",),
    "tokenize": ("segment", "build-vocab"),
    "train": ("tokenize",),
    "evaluate": ("segment",),
    "gallery": ("segment", "build-vocab"),
}


class StageOrderError(RuntimeError):
    """An upstream stage has not been run for this output directory."""


class ArtifactIntegrityError(RuntimeError):
    """A file on disk does not match the hash recorded in the manifest."""


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"

    def load(self) -> dict:
        if not self.manifest_path.exists():
            return {"version": 1, "artifacts": {}, "latest": {}}
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    def _save(self, manifest: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        os.replace(tmp, self.manifest_path)

    def directory(self, stage: str, key: str) -> Path:
        return self.root / stage / key

    def upstream(self, stage: str) -> dict[str, str]:
        """Latest artifact hash of each input stage; raises if one is missing."""
        manifest = self.load()
        out = {}
        for up in STAGE_INPUTS[stage]:
            key = manifest["latest"].get(up)
            if key is None:
                raise StageOrderError(
                    f"stage {stage!r} needs the {up!r} stage; run `elp {up}` first"
                )
            self.verify(up, key, manifest)
            out[up] = key
        return out

    def lookup(self, stage: str, key: str) -> dict | None:
        return self.load()["artifacts"].get(f"{stage}/{key}")

    def verify(self, stage: str, key: str, manifest: dict | None = None) -> dict:
        manifest = manifest or self.load()
        entry = manifest["artifacts"].get(f"{stage}/{key}")
        if entry is None:
            raise StageOrderError(f"manifest references {stage}/{key} but has no entry for it")
        base = self.directory(stage, key)
        for name, want in entry["files"].items():
            path = base / name
            if not path.exists():
                raise ArtifactIntegrityError(f"{stage}/{key}: file {name} is missing")
            if file_sha256(path) != want:
                raise ArtifactIntegrityError(f"{stage}/{key}: {name} does not match its recorded hash")
        return entry

    def is_current(self, stage: str, key: str) -> bool:
        """True when this exact artifact exists and verifies (re-run is a no-op)."""
        if self.lookup(stage, key) is None:
            return False
        self.verify(stage, key)
        return True

    def commit(self, stage: str, key: str, fingerprint: str, inputs: dict[str, str],
               info: dict | None = None) -> dict:
        base = self.directory(stage, key)
        files = {p.relative_to(base).as_posix(): file_sha256(p)
                 for p in sorted(base.rglob("*")) if p.is_file()}
        manifest = self.load()
        for up, up_key in inputs.items():
            if f"{up}/{up_key}" not in manifest["artifacts"]:
                raise StageOrderError(f"input {up}/{up_key} is not in the manifest")
        now = datetime.now(timezone.utc).isoformat(timespec="seconds")
        entry = {"stage": stage, "hash": key, "config_fingerprint": fingerprint,
                 "inputs": inputs, "files": files, "created": now, "info": info or {}}
        prev = manifest["artifacts"].get(f"{stage}/{key}")
        if prev:
            entry["created"] = prev["created"]
            entry["updated"] = now
        manifest["artifacts"][f"{stage}/{key}"] = entry
        manifest["latest"][stage] = key
        self._save(manifest)
        return entry

    def touch_latest(self, stage: str, key: str) -> None:
        manifest = self.load()
        manifest["latest"][stage] = key
        self._save(manifest)


# ---------------------------------------------------------------------------
# record bundles


def save_records(path: Path, items: list[tuple[EcgRecord, int | None]]) -> None:
    arrays, meta = {}, []
    for i, (rec, label) in enumerate(items):
        arrays[f"signal{i}"] = rec.signal
        meta.append({
            "record_id": rec.record_id, "fs": rec.fs, "label": label,
            "channels": [c.name for c in rec.channels],
            "annotations": [[a.sample, a.symbol, a.aux] for a in rec.annotations],
        })
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_records(path: Path) -> list[tuple[EcgRecord, int | None]]:
    z = np.load(path, allow_pickle=False)
    out = []
    for i, m in enumerate(json.loads(str(z["meta"]))):
        rec = EcgRecord(m["record_id"], tuple(Channel(n) for n in m["channels"]),
                        z[f"signal{i}"], m["fs"],
                        tuple(Annotation(int(s), sym, aux) for s, sym, aux in m["annotations"]))
        out.append((rec, m["label"]))
    return out
