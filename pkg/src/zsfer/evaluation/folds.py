from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientData, MissingMetadata

SCHEMES = ("kfold", "leave_one_class_out", "leave_one_patient_out")
_ALIASES = {"loco": "leave_one_class_out", "lopo": "leave_one_patient_out"}


@dataclass(frozen=True)
class FoldSpec:
    """``assignments`` maps every sample id to the fold whose evaluation set holds it."""

    scheme: str
    assignments: dict[str, int]
    keys: tuple  # per fold: held-out class / patient, or the fold number for kfold

    @property
    def n_folds(self) -> int:
        return len(self.keys)

    def eval_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignments.items() if f != fold]

    def describe(self) -> str:
        return f"{self.scheme} ({self.n_folds} folds)"


def make_folds(manifest, scheme: str, k_or_key=5, seed: int = 0) -> FoldSpec:
    """Partition a manifest's samples into evaluation folds.

    ``kfold`` takes ``k`` seeded near-equal folds; ``leave_one_class_out`` uses
    the record attribute named by ``k_or_key`` (default ``label``) and
    ``leave_one_patient_out`` uses ``patient``. Key-based folds are ordered by
    sorted key.
    """
    scheme = _ALIASES.get(scheme, scheme)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown fold scheme {scheme!r}")
    records = list(manifest)
    if scheme == "kfold":
        k = int(k_or_key)
        if k < 1 or k > len(records):
            raise InsufficientData(f"cannot make {k} folds from {len(records)} samples")
        order = np.random.default_rng(seed).permutation(len(records))
        assign = {}
        for fold, chunk in enumerate(np.array_split(order, k)):
            for i in chunk:
                assign[records[i].id] = fold
        return FoldSpec(scheme, {r.id: assign[r.id] for r in records}, tuple(range(k)))

    attr = "patient" if scheme == "leave_one_patient_out" else (
        k_or_key if isinstance(k_or_key, str) else "label")
    values = [getattr(r, attr) for r in records]
    missing = [r.id for r, v in zip(records, values) if v is None]
    if missing:
        raise MissingMetadata(f"{len(missing)} records lack {attr!r} (first: {missing[0]})")
    keys = tuple(sorted(set(values)))
    index = {k: i for i, k in enumerate(keys)}
    return FoldSpec(scheme, {r.id: index[v] for r, v in zip(records, values)}, keys)
