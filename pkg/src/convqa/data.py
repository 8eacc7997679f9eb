"""Datasets: triplet files, vocabularies, and the synthetic scene generator.

A sample is a triplet (image id, tokenized question, answer string).  Answers
may span several words and each distinct answer string is one class.  The
synthetic generator builds small scenes of colored objects on a three-slot
shelf, renders each scene into a deterministic block one-hot feature vector,
and asks templated questions about objects, counts, colors, locations, and
left/right relations.  The relation questions make word order matter: the
answer to "is the box left of the ball" flips when the two names swap, which
is what the question-reshuffle probe leans on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ParseError
from .image import ImageFeatureStore

_TERMINAL_PUNCT = "?.!"


@dataclass(frozen=True)
class Triplet:
    image_id: str
    question: tuple[str, ...]
    answer: str

    def __post_init__(self):
        if not self.question:
            raise ValueError("triplet question must not be empty")
        if not self.answer:
            raise ValueError("triplet answer must not be empty")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip terminal '? . !' characters."""
    tokens = []
    for raw in text.lower().split():
        token = raw.rstrip(_TERMINAL_PUNCT)
        if token:
            tokens.append(token)
    return tokens


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


def load_triplets(path) -> list[Triplet]:
    """Parse `image_id<TAB>question text<TAB>answer text`, one sample per line."""
    triplets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            image_id, question_text, answer_text = parts
            if not image_id:
                raise ParseError(f"{path}:{lineno}: empty image id")
            tokens = tokenize(question_text)
            if not tokens:
                raise ParseError(f"{path}:{lineno}: empty question")
            answer = normalize_answer(answer_text)
            if not answer:
                raise ParseError(f"{path}:{lineno}: empty answer")
            triplets.append(Triplet(image_id, tuple(tokens), answer))
    return triplets


def save_triplets(triplets, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(f"{t.image_id}\t{' '.join(t.question)}\t{t.answer}\n")


# -- vocabularies -----------------------------------------------------------------

class Vocab:
    """Question-side token vocabulary with reserved padding and unknown ids."""

    PAD = "<pad>"
    UNK = "<unk>"

    def __init__(self, tokens=()):
        self._tokens = [self.PAD, self.UNK]
        self._index = {self.PAD: 0, self.UNK: 1}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        return self._index[token]

    def id_for(self, token: str) -> int:
        return self._index.get(token, 1)

    def token_for(self, index: int) -> str:
        return self._tokens[index]

    def encode(self, tokens) -> list[int]:
        return [self.id_for(t) for t in tokens]

    def to_list(self) -> list[str]:
        return list(self._tokens)

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocab":
        if tokens[:2] != [cls.PAD, cls.UNK]:
            raise ParseError("vocabulary list must start with the pad and unk tokens")
        return cls(tokens[2:])

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index


class AnswerVocab:
    """The closed answer-class set; multi-word answers are single classes."""

    def __init__(self, answers=()):
        self._answers: list[str] = []
        self._index: dict[str, int] = {}
        for answer in answers:
            self.add(answer)

    def add(self, answer: str) -> int:
        answer = normalize_answer(answer)
        if answer not in self._index:
            self._index[answer] = len(self._answers)
            self._answers.append(answer)
        return self._index[answer]

    def class_of(self, answer: str) -> int:
        key = normalize_answer(answer)
        if key not in self._index:
            raise KeyError(f"answer {answer!r} has no class")
        return self._index[key]

    def answer_of(self, index: int) -> str:
        return self._answers[index]

    def to_list(self) -> list[str]:
        return list(self._answers)

    @classmethod
    def from_list(cls, answers: list[str]) -> "AnswerVocab":
        return cls(answers)

    def __len__(self) -> int:
        return len(self._answers)

    def __contains__(self, answer: str) -> bool:
        return normalize_answer(answer) in self._index


def build_vocabs(train_triplets) -> tuple[Vocab, AnswerVocab]:
    """Vocabularies from the training split only, in first-occurrence order.

    Unknown test-time tokens map to the reserved unk id; unseen test answers
    simply have no class and can never be predicted.
    """
    if not train_triplets:
        raise ValueError("cannot build vocabularies from an empty training set")
    vocab = Vocab()
    answers = AnswerVocab()
    for t in train_triplets:
        for token in t.question:
            vocab.add(token)
        answers.add(t.answer)
    return vocab, answers


def truncate_answer_classes(triplets, max_classes: int) -> AnswerVocab:
    """Optional frequency truncation of the answer set for large corpora."""
    if max_classes < 2:
        raise ConfigError(f"need at least 2 answer classes, got {max_classes}")
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    for t in triplets:
        key = normalize_answer(t.answer)
        counts[key] = counts.get(key, 0) + 1
        order.setdefault(key, len(order))
    ranked = sorted(counts, key=lambda a: (-counts[a], order[a]))
    return AnswerVocab(ranked[:max_classes])


# -- synthetic scenes --------------------------------------------------------------

NAME_POOL = ("box", "ball", "chair", "lamp", "book", "cup", "plant", "mug")
COLOR_POOL = ("red", "blue", "green", "yellow", "white", "black")
LOCATIONS = ("left", "middle", "right")

_NAME_SET = frozenset(NAME_POOL)

# question type mix; relations dominate enough that reshuffling hurts
_TYPE_NAMES = ("count", "color", "where", "object_at", "relation")
_TYPE_WEIGHTS = (0.20, 0.25, 0.15, 0.10, 0.30)


@dataclass(frozen=True)
class SceneObject:
    slot: int
    name: str
    color: str


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the synthetic world: object/attribute counts and feature layout."""

    num_object_types: int = 5
    num_colors: int = 5
    max_scene_objects: int = 3
    feature_dim: int = 64
    noise: float = 0.05

    def __post_init__(self):
        if not 2 <= self.num_object_types <= len(NAME_POOL):
            raise ConfigError(
                f"num_object_types must be in [2, {len(NAME_POOL)}], "
                f"got {self.num_object_types}"
            )
        if not 2 <= self.num_colors <= len(COLOR_POOL):
            raise ConfigError(
                f"num_colors must be in [2, {len(COLOR_POOL)}], got {self.num_colors}"
            )
        if not 1 <= self.max_scene_objects <= len(LOCATIONS):
            raise ConfigError(
                f"max_scene_objects must be in [1, {len(LOCATIONS)}], "
                f"got {self.max_scene_objects}"
            )
        if self.feature_dim < self.required_feature_dim:
            raise ConfigError(
                f"feature_dim {self.feature_dim} below the {self.required_feature_dim} "
                f"entries needed by the block one-hot layout"
            )
        if not 0.0 <= self.noise <= 0.05:
            raise ConfigError(f"noise magnitude must be in [0, 0.05], got {self.noise}")

    @property
    def names(self) -> tuple[str, ...]:
        return NAME_POOL[: self.num_object_types]

    @property
    def colors(self) -> tuple[str, ...]:
        return COLOR_POOL[: self.num_colors]

    @property
    def block_size(self) -> int:
        return 1 + self.num_object_types + self.num_colors

    @property
    def required_feature_dim(self) -> int:
        # slot blocks, a count one-hot, and one precedence bit per ordered
        # name pair (the stand-in for what a strong image network would
        # expose about spatial layout)
        pair_bits = self.num_object_types * (self.num_object_types - 1)
        return len(LOCATIONS) * self.block_size + len(LOCATIONS) + pair_bits


Scene = tuple[SceneObject, ...]


def scene_features(scene: Scene, spec: SyntheticSpec, noise: np.ndarray | None = None) -> np.ndarray:
    """Deterministic block one-hot encoding of a scene.

    Layout: per slot an occupancy flag plus name and color one-hots, then a
    scene-size one-hot, then one bit per ordered name pair that is set when
    both objects are present and the first sits left of the second.  Unused
    tail dimensions stay zero.
    """
    vec = np.zeros(spec.feature_dim)
    for obj in scene:
        base = obj.slot * spec.block_size
        vec[base] = 1.0
        vec[base + 1 + spec.names.index(obj.name)] = 1.0
        vec[base + 1 + spec.num_object_types + spec.colors.index(obj.color)] = 1.0
    count_base = len(LOCATIONS) * spec.block_size
    vec[count_base + len(scene) - 1] = 1.0
    pair_base = count_base + len(LOCATIONS)
    slot_of = {obj.name: obj.slot for obj in scene}
    pair = 0
    for first in spec.names:
        for second in spec.names:
            if first == second:
                continue
            if first in slot_of and second in slot_of and slot_of[first] < slot_of[second]:
                vec[pair_base + pair] = 1.0
            pair += 1
    if noise is not None:
        vec = vec + noise
    return vec


def oracle_answer(scene: Scene, tokens) -> str | None:
    """Ground-truth answer for any token sequence, shuffled or not.

    Parsing is keyword based: a count cue, a color cue, a location cue, or a
    left/right relation over the first two object names in order of
    appearance.  Only the relation reading depends on token order.
    """
    tokens = [t.lower() for t in tokens]
    present = {obj.name: obj for obj in scene}

    if "many" in tokens:
        return str(len(scene))
    if "color" in tokens:
        for t in tokens:
            if t in present:
                return present[t].color
        return None
    if "where" in tokens:
        for t in tokens:
            if t in present:
                return LOCATIONS[present[t].slot]
        return None

    names_in_q = [t for t in tokens if t in _NAME_SET]
    relation = "left" if "left" in tokens else ("right" if "right" in tokens else None)
    if len(names_in_q) >= 2 and relation is not None:
        first = present.get(names_in_q[0])
        second = present.get(names_in_q[1])
        if first is None or second is None:
            return None
        if relation == "left":
            return "yes" if first.slot < second.slot else "no"
        return "yes" if first.slot > second.slot else "no"

    for loc in LOCATIONS:
        if loc in tokens:
            slot = LOCATIONS.index(loc)
            for obj in scene:
                if obj.slot == slot:
                    return obj.name
            return None
    return None


def _random_scene(spec: SyntheticSpec, rng: np.random.Generator) -> Scene:
    count = int(rng.integers(1, spec.max_scene_objects + 1))
    slots = sorted(rng.choice(len(LOCATIONS), size=count, replace=False).tolist())
    names = rng.choice(len(spec.names), size=count, replace=False)
    colors = rng.integers(0, spec.num_colors, size=count)
    return tuple(
        SceneObject(slot, spec.names[int(n)], spec.colors[int(c)])
        for slot, n, c in zip(slots, names, colors)
    )


def _random_question(scene: Scene, rng: np.random.Generator) -> list[str]:
    weights = np.array(_TYPE_WEIGHTS)
    if len(scene) < 2:
        weights = weights.copy()
        weights[_TYPE_NAMES.index("relation")] = 0.0
    weights = weights / weights.sum()
    qtype = _TYPE_NAMES[int(rng.choice(len(_TYPE_NAMES), p=weights))]

    if qtype == "count":
        return ["how", "many", "objects", "are", "there"]
    if qtype == "color":
        obj = scene[int(rng.integers(len(scene)))]
        return ["what", "color", "is", "the", obj.name]
    if qtype == "where":
        obj = scene[int(rng.integers(len(scene)))]
        return ["where", "is", "the", obj.name]
    if qtype == "object_at":
        obj = scene[int(rng.integers(len(scene)))]
        return ["what", "is", "at", "the", LOCATIONS[obj.slot]]
    pair = rng.choice(len(scene), size=2, replace=False)
    first, second = scene[int(pair[0])], scene[int(pair[1])]
    relation = "left" if rng.random() < 0.5 else "right"
    return ["is", "the", first.name, relation, "of", "the", second.name]


@dataclass
class SyntheticDataset:
    triplets: list[Triplet]
    features: ImageFeatureStore
    scenes: dict[str, Scene]
    oracle: Callable[[str, tuple], str | None]
    spec: SyntheticSpec


def generate_synthetic(spec: SyntheticSpec, n_samples: int, seed: int) -> SyntheticDataset:
    """Deterministic synthetic corpus: one fresh scene and question per sample.

    The returned oracle answers any (image id, token sequence) pair against
    the underlying scene, so it stays valid for reshuffled questions.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be positive, got {n_samples}")
    rng = np.random.default_rng(seed)
    store = ImageFeatureStore(spec.feature_dim)
    triplets: list[Triplet] = []
    scenes: dict[str, Scene] = {}
    for i in range(n_samples):
        image_id = f"scene{i:06d}"
        scene = _random_scene(spec, rng)
        noise = None
        if spec.noise > 0.0:
            noise = rng.uniform(-spec.noise, spec.noise, size=spec.feature_dim)
        store.add(image_id, scene_features(scene, spec, noise))
        question = _random_question(scene, rng)
        answer = oracle_answer(scene, question)
        assert answer is not None  # generated questions are always answerable
        triplets.append(Triplet(image_id, tuple(question), answer))
        scenes[image_id] = scene

    def oracle(image_id: str, tokens) -> str | None:
        return oracle_answer(scenes[image_id], tokens)

    return SyntheticDataset(triplets, store, scenes, oracle, spec)


def shuffle_question_words(triplets, seed: int) -> list[Triplet]:
    """Reshuffle every question's tokens; answers and image ids stay put."""
    rng = np.random.default_rng(seed)
    out = []
    for t in triplets:
        perm = rng.permutation(len(t.question))
        out.append(Triplet(t.image_id, tuple(t.question[i] for i in perm), t.answer))
    return out
