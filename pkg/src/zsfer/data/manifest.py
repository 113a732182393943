"""JSON-lines manifest of video/text/label records.

The first line is a header object::

    {"schema": "zsfer-manifest", "version": 1, "feature_dim": 32, "targets": [...]}

Every following non-empty line is one record::

    {"id": "s0001", "frames": "frames/s0001.zsff", "caption": "...",
     "label": "anger", "compound_label": null, "fold": null, "split": "train",
     "patient": null, "symptoms": null}

``id`` and ``frames`` are required; ``frames`` is resolved relative to the
manifest's directory. ``targets`` names the entries of ``symptoms``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import DuplicateId, ParseError, UnresolvedSource
from .frames import read_frames, read_header, write_frames

SCHEMA = "zsfer-manifest"
VERSION = 1
OPTIONAL_FIELDS = ("caption", "label", "compound_label", "fold", "split", "patient", "symptoms")


@dataclass(eq=False)
class Record:
    id: str
    source: str
    caption: str | None = None
    label: str | None = None
    compound_label: str | None = None
    fold: str | int | None = None
    split: str | None = None
    patient: str | None = None
    symptoms: list[float] | None = None
    base_dir: Path | None = field(default=None, repr=False)
    frames: np.ndarray | None = field(default=None, repr=False)

    def path(self) -> Path:
        p = Path(self.source)
        return p if p.is_absolute() or self.base_dir is None else self.base_dir / p

    def load_frames(self) -> np.ndarray:
        if self.frames is None:
            self.frames = read_frames(self.path())
        return self.frames

    def to_json(self) -> dict:
        d = {"id": self.id, "frames": self.source}
        for k in OPTIONAL_FIELDS:
            v = getattr(self, k)
            if v is not None:
                d[k] = list(map(float, v)) if k == "symptoms" else v
        return d

    def same_content(self, other: "Record") -> bool:
        return self.to_json() == other.to_json()


@dataclass
class Manifest:
    records: list[Record]
    feature_dim: int
    targets: list[str] | None = None
    version: int = VERSION

    def __post_init__(self):
        seen = set()
        for i, r in enumerate(self.records):
            if r.id in seen:
                raise DuplicateId(f"record {i}: duplicate sample id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.records}

    def where(self, **criteria) -> "Manifest":
        """Records whose attributes equal every given value (a list/set/tuple value means membership)."""
        def ok(r):
            for k, v in criteria.items():
                val = getattr(r, k)
                if isinstance(v, (list, tuple, set, frozenset)):
                    if val not in v:
                        return False
                elif val != v:
                    return False
            return True
        return self.subset(r for r in self.records if ok(r))

    def subset(self, records: Iterable[Record]) -> "Manifest":
        return Manifest(list(records), self.feature_dim, self.targets, self.version)

    def select_ids(self, ids: Iterable[str]) -> "Manifest":
        index = self.by_id()
        return self.subset(index[i] for i in ids)

    def labels(self, key: str = "label") -> list:
        return [getattr(r, key) for r in self.records]

    def header(self) -> dict:
        h = {"schema": SCHEMA, "version": self.version, "feature_dim": self.feature_dim}
        if self.targets is not None:
            h["targets"] = list(self.targets)
        return h


def save_manifest(manifest: Manifest, path) -> Path:
    """Write the manifest and any in-memory frame arrays it carries."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for r in manifest.records:
        if r.frames is not None:
            target = Path(r.source)
            target = target if target.is_absolute() else path.parent / target
            target.parent.mkdir(parents=True, exist_ok=True)
            write_frames(r.frames, target)
    lines = [json.dumps(manifest.header(), sort_keys=True)]
    lines += [json.dumps(r.to_json(), sort_keys=True) for r in manifest.records]
    path.write_text("\n".join(lines) + "\n")
    return path


def _check_record(obj, lineno: int, idx: int, base: Path) -> Record:
    where = f"line {lineno} (record {idx})"
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    unknown = set(obj) - {"id", "frames", *OPTIONAL_FIELDS}
    if unknown:
        raise ParseError(f"{where}: unknown fields {sorted(unknown)}")
    if not isinstance(obj.get("id"), str) or not obj["id"]:
        raise ParseError(f"{where}: 'id' must be a non-empty string")
    if not isinstance(obj.get("frames"), str):
        raise ParseError(f"{where}: 'frames' must be a path string")
    for k in ("caption", "label", "compound_label", "split", "patient"):
        if obj.get(k) is not None and not isinstance(obj[k], str):
            raise ParseError(f"{where}: {k!r} must be a string")
    if obj.get("fold") is not None and not isinstance(obj["fold"], (str, int)):
        raise ParseError(f"{where}: 'fold' must be a string or integer")
    sym = obj.get("symptoms")
    if sym is not None and (not isinstance(sym, list)
                            or not all(isinstance(v, (int, float)) for v in sym)):
        raise ParseError(f"{where}: 'symptoms' must be a list of numbers")
    return Record(id=obj["id"], source=obj["frames"],
                  **{k: obj.get(k) for k in OPTIONAL_FIELDS}, base_dir=base)


def load_manifest(path, check_sources: bool = True) -> Manifest:
    """Parse and fully validate a manifest; nothing partial is ever returned."""
    path = Path(path)
    base = path.parent
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ParseError(f"manifest {path} does not exist") from exc
    if not lines:
        raise ParseError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} line 1: bad header JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise ParseError(f"{path} line 1: not a {SCHEMA} header")
    if header.get("version") != VERSION:
        raise ParseError(f"{path} line 1: unsupported version {header.get('version')}")
    fdim = header.get("feature_dim")
    if not isinstance(fdim, int) or fdim < 1:
        raise ParseError(f"{path} line 1: 'feature_dim' must be a positive integer")
    targets = header.get("targets")

    records: list[Record] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        idx = len(records)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} line {lineno} (record {idx}): {exc}") from exc
        rec = _check_record(obj, lineno, idx, base)
        if rec.id in seen:
            raise DuplicateId(f"{path} line {lineno} (record {idx}): id {rec.id!r} "
                              f"already used by record {seen[rec.id]}")
        seen[rec.id] = idx
        if targets is not None and rec.symptoms is not None and len(rec.symptoms) != len(targets):
            raise ParseError(f"{path} line {lineno} (record {idx}): {len(rec.symptoms)} symptoms "
                             f"for {len(targets)} targets")
        if check_sources:
            try:
                t_raw, dim = read_header(rec.path())
            except UnresolvedSource as exc:
                raise UnresolvedSource(f"line {lineno} (record {idx}): {exc}") from exc
            if dim != fdim or t_raw < 1:
                raise ParseError(f"{path} line {lineno} (record {idx}): frame source is "
                                 f"{t_raw}x{dim}, manifest declares feature_dim {fdim}")
        records.append(rec)
    return Manifest(records, fdim, targets)


def manifest_from_arrays(items, feature_dim: int, targets=None) -> Manifest:
    """Build an in-memory manifest from dicts carrying a ``frames`` array."""
    names = {f.name for f in fields(Record)}
    recs = []
    for d in items:
        d = dict(d)
        frames = np.asarray(d.pop("frames"), dtype=np.float64)
        source = d.pop("source", f"frames/{d['id']}.zsff")
        recs.append(Record(source=source, frames=frames, **{k: v for k, v in d.items() if k in names}))
    return Manifest(recs, feature_dim, targets)
