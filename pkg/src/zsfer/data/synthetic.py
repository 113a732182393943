"""Synthetic video-caption corpora with known ground truth.

Each attribute word owns a direction in frame-feature space. A sample of a
class expresses some of that class's attributes; every frame is the sum of
the expressed directions, scaled by the class's temporal envelope at that
frame's time, plus isotropic Gaussian noise. The caption names the expressed
attributes (and the envelope word) in a random template and never the class
name, so a class-level description assembled from the attribute list alone
is a fair zero-shot prompt.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigInvalid
from .manifest import Manifest, Record

ENVELOPES = {
    "constant": "steady",
    "rising": "emerging",
    "falling": "fading",
    "apex": "fleeting",
}

CAPTION_TEMPLATES = (
    "the subject shows {phrase}",
    "a person with {phrase} on their face",
    "close up of someone displaying {phrase}",
    "the face shows {phrase} while talking",
    "{phrase} can be seen on the speaker",
)
DESCRIPTION_TEMPLATE = "a facial expression with {phrase}"

ATTRIBUTE_POOL = (
    "frown", "glare", "scowl", "clench", "sneer", "wrinkle", "grimace", "curl",
    "gape", "tremble", "widen", "freeze", "beam", "crinkle", "dimple", "glow",
    "stare", "blank", "still", "calm", "droop", "tear", "sag", "slump",
    "gasp", "arch", "lift", "jolt", "smirk", "tilt", "squint", "purse",
    "twitch", "blink", "bite", "pout", "wince", "flinch", "nod", "sigh",
)
BASIC_SEVEN = ("anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise")


@dataclass
class ClassSpec:
    name: str
    attributes: list[str]
    envelope: str = "constant"


@dataclass
class SyntheticCorpusConfig:
    classes: list[ClassSpec]
    n_train: int = 2000
    n_test: int = 700
    frames_per_sample: int = 64
    feature_dim: int = 32
    noise: float = 0.1
    temporal_patterns: bool = True
    min_attributes: int | None = 2
    amplitude: float = 1.0
    compounds: list[tuple[str, list[str]]] = field(default_factory=list)
    n_compound_test: int = 0
    class_weights: list[float] | None = None
    n_patients: int = 0
    seed: int = 0

    def __post_init__(self):
        self.classes = [c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes]
        self.compounds = [(n, list(c)) for n, c in self.compounds]
        self.validate()

    def validate(self) -> None:
        if not self.classes:
            raise ConfigInvalid("at least one class is required")
        if self.noise < 0:
            raise ConfigInvalid("noise must be >= 0")
        if min(self.frames_per_sample, self.feature_dim) < 1 or min(self.n_train, self.n_test) < 0:
            raise ConfigInvalid("sizes must be positive")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ConfigInvalid("class names must be unique")
        token_sets = []
        for c in self.classes:
            if not c.attributes:
                raise ConfigInvalid(f"class {c.name!r} has no attributes")
            if c.envelope not in ENVELOPES:
                raise ConfigInvalid(f"class {c.name!r}: unknown envelope {c.envelope!r}")
            if set(c.attributes) & set(names):
                raise ConfigInvalid(f"class {c.name!r}: attributes may not be class names")
            token_sets.append(frozenset(c.attributes) | (
                {ENVELOPES[c.envelope]} if self.temporal_patterns else frozenset()))
        if len(set(token_sets)) != len(token_sets):
            raise ConfigInvalid("attribute-token sets must be pairwise distinct across classes")
        if self.min_attributes is not None and self.min_attributes < 1:
            raise ConfigInvalid("min_attributes must be >= 1 or null")
        if self.class_weights is not None and (
                len(self.class_weights) != len(self.classes) or min(self.class_weights) < 0):
            raise ConfigInvalid("class_weights must be one non-negative weight per class")
        for name, comps in self.compounds:
            missing = set(comps) - set(names)
            if missing or len(comps) < 1:
                raise ConfigInvalid(f"compound {name!r} has unknown components {sorted(missing)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["compounds"] = [[n, list(c)] for n, c in self.compounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc


def default_classes(n_classes: int = 7, attributes_per_class: int = 4,
                    temporal_patterns: bool = True) -> list[ClassSpec]:
    """Disjoint attribute sets and cycling envelopes for up to ten classes."""
    if n_classes * attributes_per_class > len(ATTRIBUTE_POOL):
        raise ConfigInvalid("not enough attribute words for that many classes")
    names = list(BASIC_SEVEN) + [f"class{i}" for i in range(len(BASIC_SEVEN), n_classes)]
    cycle = ("rising", "falling", "apex", "constant")
    return [
        ClassSpec(names[i],
                  list(ATTRIBUTE_POOL[i * attributes_per_class:(i + 1) * attributes_per_class]),
                  cycle[i % len(cycle)] if temporal_patterns else "constant")
        for i in range(n_classes)
    ]


def temporal_pair_classes(n_pairs: int = 3, n_single: int = 1,
                          attributes_per_class: int = 3) -> list[ClassSpec]:
    """Classes in rising/falling pairs that share their static attributes.

    Within a pair the frame multisets coincide, so only frame order tells the
    classes apart.
    """
    specs = []
    k = 0
    for p in range(n_pairs):
        attrs = list(ATTRIBUTE_POOL[k:k + attributes_per_class])
        k += attributes_per_class
        specs.append(ClassSpec(f"pair{p}_rise", attrs, "rising"))
        specs.append(ClassSpec(f"pair{p}_fall", attrs, "falling"))
    for s in range(n_single):
        specs.append(ClassSpec(f"single{s}", list(ATTRIBUTE_POOL[k:k + attributes_per_class]),
                               "constant"))
        k += attributes_per_class
    return specs


def envelope(name: str, n_frames: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n_frames) if n_frames > 1 else np.array([0.5])
    if name == "constant":
        return np.ones_like(s)
    if name == "rising":
        return s
    if name == "falling":
        return 1.0 - s
    if name == "apex":
        return 1.0 - np.abs(2.0 * s - 1.0)
    raise ConfigInvalid(f"unknown envelope {name!r}")


def _join(words: Sequence[str]) -> str:
    words = list(words)
    return words[0] if len(words) == 1 else ", ".join(words[:-1]) + " and " + words[-1]


def phrase(attributes: Sequence[str], dynamic: str | None) -> str:
    body = _join(attributes)
    return f"{dynamic} {body}" if dynamic else body


class _World:
    """Attribute directions and per-class frame patterns for one config."""

    def __init__(self, cfg: SyntheticCorpusConfig):
        self.cfg = cfg
        words = sorted({a for c in cfg.classes for a in c.attributes})
        rng = np.random.default_rng([cfg.seed, 0])
        g = rng.normal(size=(cfg.feature_dim, len(words)))
        if cfg.feature_dim >= len(words):
            dirs = np.linalg.qr(g)[0].T
        else:
            dirs = (g / np.linalg.norm(g, axis=0)).T
        self.directions = {w: dirs[i] for i, w in enumerate(words)}
        self.by_name = {c.name: c for c in cfg.classes}

    def dynamic_word(self, spec: ClassSpec) -> str | None:
        return ENVELOPES[spec.envelope] if self.cfg.temporal_patterns else None

    def env(self, spec: ClassSpec) -> np.ndarray:
        name = spec.envelope if self.cfg.temporal_patterns else "constant"
        return envelope(name, self.cfg.frames_per_sample)

    def prototype(self, name: str) -> np.ndarray:
        v = sum(self.directions[a] for a in self.by_name[name].attributes)
        return v / np.linalg.norm(v)

    def pattern(self, spec: ClassSpec, attrs: Sequence[str]) -> np.ndarray:
        static = sum(self.directions[a] for a in attrs)
        return self.cfg.amplitude * np.outer(self.env(spec), static)

    def choose_attributes(self, spec: ClassSpec, rng) -> list[str]:
        m = len(spec.attributes)
        if self.cfg.min_attributes is None or self.cfg.min_attributes >= m:
            return list(spec.attributes)
        k = int(rng.integers(self.cfg.min_attributes, m + 1))
        idx = np.sort(rng.choice(m, size=k, replace=False))
        return [spec.attributes[i] for i in idx]

    def description(self, name: str) -> str:
        spec = self.by_name[name]
        return DESCRIPTION_TEMPLATE.format(phrase=phrase(spec.attributes, self.dynamic_word(spec)))


@dataclass
class SyntheticCorpus:
    manifest: Manifest
    key: dict

    def descriptions(self) -> dict[str, str]:
        return {n: c["description"] for n, c in self.key["classes"].items()}

    def prototypes(self) -> dict[str, np.ndarray]:
        return {n: np.asarray(c["prototype"]) for n, c in self.key["classes"].items()}

    def registry_text(self) -> str:
        """Class-description registry file content for the corpus's classes."""
        lines = ["# name\tdescription (built from attribute words only)"]
        lines += [f"{n}\t{d}" for n, d in self.descriptions().items()]
        return "\n".join(lines) + "\n"

    def compound_text(self) -> str:
        lines = ["# name\tcomponents"]
        lines += [f"{n}\t{','.join(c)}" for n, c in self.key["compounds"].items()]
        return "\n".join(lines) + "\n"

    def key_json(self) -> str:
        return json.dumps(self.key, sort_keys=True, indent=1)


def generate_synthetic_corpus(config: SyntheticCorpusConfig) -> SyntheticCorpus:
    """Deterministic corpus (train, test and optional compound-test records) plus its key."""
    config.validate()
    world = _World(config)
    rng = np.random.default_rng([config.seed, 1])
    names = [c.name for c in config.classes]
    records: list[Record] = []

    def draw_labels(n):
        if config.class_weights is None:
            return [i % len(names) for i in range(n)]
        w = np.asarray(config.class_weights, dtype=np.float64)
        return list(rng.choice(len(names), size=n, p=w / w.sum()))

    def noise():
        return config.noise * rng.normal(size=(config.frames_per_sample, config.feature_dim))

    for split, n in (("train", config.n_train), ("test", config.n_test)):
        for i, ci in enumerate(draw_labels(n)):
            spec = config.classes[ci]
            attrs = world.choose_attributes(spec, rng)
            order = rng.permutation(len(attrs))
            template = CAPTION_TEMPLATES[int(rng.integers(len(CAPTION_TEMPLATES)))]
            caption = template.format(
                phrase=phrase([attrs[j] for j in order], world.dynamic_word(spec)))
            frames = world.pattern(spec, attrs) + noise()
            sid = f"{split}-{i:05d}"
            records.append(Record(
                id=sid, source=f"frames/{sid}.zsff", caption=caption, label=spec.name,
                split=split, frames=frames,
                patient=f"p{i % config.n_patients:03d}" if config.n_patients else None))

    for i in range(config.n_compound_test if config.compounds else 0):
        name, comps = config.compounds[i % len(config.compounds)]
        frames = sum(world.pattern(world.by_name[c], world.choose_attributes(world.by_name[c], rng))
                     for c in comps) / len(comps) + noise()
        sid = f"compound-{i:05d}"
        records.append(Record(id=sid, source=f"frames/{sid}.zsff", compound_label=name,
                              split="compound_test", frames=frames))

    key = {
        "seed": config.seed,
        "classes": {
            c.name: {
                "attributes": list(c.attributes),
                "envelope": c.envelope if config.temporal_patterns else "constant",
                "dynamic_word": world.dynamic_word(c),
                "description": world.description(c.name),
                "prototype": world.prototype(c.name).tolist(),
            } for c in config.classes
        },
        "compounds": {n: list(c) for n, c in config.compounds},
        "directions": {w: d.tolist() for w, d in world.directions.items()},
    }
    return SyntheticCorpus(Manifest(records, config.feature_dim), key)


def nearest_prototype_accuracy(corpus: SyntheticCorpus, split: str = "test") -> float:
    """Accuracy of assigning each video's mean frame to the closest class prototype."""
    protos = corpus.prototypes()
    names = list(protos)
    p = np.stack([protos[n] for n in names])
    hits = total = 0
    for r in corpus.manifest.records:
        if r.split != split or r.label is None:
            continue
        m = r.load_frames().mean(axis=0)
        hits += names[int(np.argmax(p @ m))] == r.label
        total += 1
    return hits / total if total else float("nan")
