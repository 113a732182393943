"""Class descriptions, neutral prompts and class-embedding registries.

Registry files are tab-separated text: ``name<TAB>description`` per line,
``#`` starts a comment. Compound-spec files use the same layout with a
comma-separated component list in place of the description.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import compose_compound, mean_embedding
from .encoders import ModelState, encode_text, encode_texts
from .errors import (
    AssetMissing,
    ClassNotInRegistry,
    DuplicateName,
    ParseError,
    TruncationWarning,
    UnknownComponent,
    UnknownSubset,
    UnknownToken,
)

SEVEN = ("anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise")
SUBSETS = ("eleven", "seven", "custom")

PROMPT_TEMPLATES = (
    "an expression of {}",
    "a face showing {}",
    "a photo of a {} face",
    "a video of a person feeling {}",
    "a close up of a face expressing {}",
)


@dataclass(frozen=True)
class ClassDescription:
    name: str
    description: str = ""
    is_compound: bool = False
    components: tuple[str, ...] = ()


@dataclass
class DescriptionRegistry:
    """Ordered classes and, once built, one unit-norm embedding per class (row i <-> class i)."""

    entries: list[ClassDescription]
    embeddings: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise DuplicateName(f"duplicate class names {dup}")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ClassNotInRegistry(f"class {name!r} is not in the registry") from None

    def __getitem__(self, name: str) -> ClassDescription:
        return self.entries[self.index(name)]

    def embedding(self, name: str) -> np.ndarray:
        if self.embeddings is None:
            raise ValueError("registry embeddings have not been built")
        return self.embeddings[self.index(name)]

    def restrict(self, names: Sequence[str]) -> "DescriptionRegistry":
        """Registry over ``names`` only, in the given order."""
        idx = [self.index(n) for n in names]
        emb = None if self.embeddings is None else self.embeddings[idx]
        return DescriptionRegistry([self.entries[i] for i in idx], emb, self.provenance)


def _asset(name: str) -> Path:
    return Path(str(resources.files("zsfer") / "assets" / name))


def default_registry_path() -> Path:
    return _asset("class_descriptions.tsv")


def default_compound_path() -> Path:
    return _asset("compounds_example.tsv")


def _read_table(path) -> tuple[list[tuple[int, str, str]], str]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise AssetMissing(f"{path} does not exist") from exc
    rows = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ParseError(f"{path} line {lineno}: expected 'name<TAB>value'")
        rows.append((lineno, parts[0].strip(), parts[1].strip()))
    digest = hashlib.sha256(raw).hexdigest()[:12]
    return rows, f"{path.name}@{digest}"


def parse_registry_text(text: str, provenance: str = "inline") -> DescriptionRegistry:
    entries, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ParseError(f"line {lineno}: expected 'name<TAB>description'")
        name = parts[0].strip()
        if name in seen:
            raise ParseError(f"line {lineno}: duplicate class name {name!r}")
        seen.add(name)
        entries.append(ClassDescription(name, parts[1].strip()))
    return DescriptionRegistry(entries, provenance=provenance)


def load_registry(asset_path=None, subset: str = "eleven") -> DescriptionRegistry:
    """Load class descriptions; ``seven`` keeps the seven basic classes in file order."""
    if subset not in SUBSETS:
        raise UnknownSubset(f"unknown subset {subset!r}; choose from {SUBSETS}")
    path = Path(asset_path) if asset_path is not None else default_registry_path()
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise AssetMissing(f"{path} does not exist") from exc
    reg = parse_registry_text(text, f"{path.name}@{hashlib.sha256(text.encode()).hexdigest()[:12]}")
    if subset == "seven":
        missing = set(SEVEN) - set(reg.names)
        if missing:
            raise ParseError(f"{path}: missing basic classes {sorted(missing)}")
        reg = DescriptionRegistry([e for e in reg.entries if e.name in SEVEN],
                                  provenance=reg.provenance + ":seven")
    elif subset == "eleven" and len(reg) != 11:
        raise ParseError(f"{path}: the eleven-class subset needs 11 entries, found {len(reg)}")
    return reg


def load_compound_specs(path=None) -> list[tuple[str, list[str]]]:
    rows, _ = _read_table(path if path is not None else default_compound_path())
    specs, seen = [], set()
    for lineno, name, comps in rows:
        if name in seen:
            raise ParseError(f"line {lineno}: duplicate compound {name!r}")
        seen.add(name)
        parts = [c.strip() for c in comps.split(",") if c.strip()]
        if not parts:
            raise ParseError(f"line {lineno}: compound {name!r} lists no components")
        specs.append((name, parts))
    return specs


def load_neutral_prompts(path=None) -> list[str]:
    path = Path(path) if path is not None else _asset("neutral_prompts.txt")
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise AssetMissing(f"{path} does not exist") from exc
    prompts = [l.strip() for l in lines if l.strip() and not l.lstrip().startswith("#")]
    if len(prompts) < 2:
        raise AssetMissing(f"{path}: need at least two neutral prompts")
    return prompts


_NEUTRAL_CACHE: list[str] | None = None


def sample_neutral_description(rng_seed, prompts: Sequence[str] | None = None) -> str:
    """Two distinct neutral prompts chosen uniformly and joined with a space."""
    global _NEUTRAL_CACHE
    if prompts is None:
        if _NEUTRAL_CACHE is None:
            _NEUTRAL_CACHE = load_neutral_prompts()
        prompts = _NEUTRAL_CACHE
    i, j = np.random.default_rng(rng_seed).choice(len(prompts), size=2, replace=False)
    return f"{prompts[i]} {prompts[j]}"


# ---------------------------------------------------------------- embedding sets


def _encode_or_report(state, tokenizer, name, text, strict):
    try:
        return encode_text(state, tokenizer.encode(text, strict=strict))
    except UnknownToken as exc:
        raise UnknownToken(f"class {name!r}: {exc}") from exc


def build_class_embedding_set(registry: DescriptionRegistry, state: ModelState, tokenizer,
                              strict: bool = True) -> DescriptionRegistry:
    """Embed every basic class's description; compound entries must be added afterwards."""
    basic = [e for e in registry.entries if not e.is_compound]
    emb = np.stack([_encode_or_report(state, tokenizer, e.name, e.description, strict)
                    for e in basic])
    return DescriptionRegistry(basic, emb, registry.provenance)


def prompt_ensemble_registry(registry: DescriptionRegistry, state: ModelState, tokenizer,
                             templates: Sequence[str] = PROMPT_TEMPLATES) -> DescriptionRegistry:
    """Class embeddings from averaged name templates instead of descriptions."""
    emb = np.stack([
        mean_embedding(encode_texts(state, [tokenizer.encode(t.format(e.name)) for t in templates]))
        for e in registry.entries if not e.is_compound])
    return DescriptionRegistry([e for e in registry.entries if not e.is_compound], emb,
                               registry.provenance + ":prompt_ensemble")


def _check_specs(registry: DescriptionRegistry, specs):
    if registry.embeddings is None:
        raise ValueError("build the basic class embeddings first")
    names = set(registry.names)
    for name, comps in specs:
        if name in names:
            raise DuplicateName(f"class {name!r} already exists")
        names.add(name)
        for c in comps:
            if c not in registry.names:
                raise UnknownComponent(f"compound {name!r}: unknown component {c!r}")
            if registry[c].is_compound:
                raise UnknownComponent(f"compound {name!r}: component {c!r} is itself a compound")


def extend_with_compounds(registry: DescriptionRegistry, compound_specs) -> DescriptionRegistry:
    """Append one composed (normalized mean) embedding per compound spec."""
    specs = [(n, list(c)) for n, c in compound_specs]
    _check_specs(registry, specs)
    new_entries = [ClassDescription(n, "", True, tuple(c)) for n, c in specs]
    new_emb = [compose_compound([registry.embedding(x) for x in c]) for _, c in specs]
    emb = np.vstack([registry.embeddings] + ([np.stack(new_emb)] if new_emb else []))
    return DescriptionRegistry(registry.entries + new_entries, emb, registry.provenance)


def concat_prompt_baseline(registry: DescriptionRegistry, compound_specs, state: ModelState,
                           tokenizer, strict: bool = False) -> DescriptionRegistry:
    """Append compounds embedded from their components' descriptions joined in list order."""
    specs = [(n, list(c)) for n, c in compound_specs]
    _check_specs(registry, specs)
    new_entries, new_emb = [], []
    for name, comps in specs:
        text = " ".join(registry[c].description for c in comps)
        with warnings.catch_warnings():
            warnings.simplefilter("always", TruncationWarning)
            new_emb.append(_encode_or_report(state, tokenizer, name, text, strict))
        new_entries.append(ClassDescription(name, text, True, tuple(comps)))
    emb = np.vstack([registry.embeddings] + ([np.stack(new_emb)] if new_emb else []))
    return DescriptionRegistry(registry.entries + new_entries, emb,
                               registry.provenance + ":concat")
