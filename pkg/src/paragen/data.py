"""Synthetic scenes, vocabulary, and corpus I/O.

Stands in for a dense-captioning front end: each example carries region
feature vectors paired with short phrases, a multi-sentence description, and
a one-sentence caption, all drawn from a small fixed grammar. Region
features are built from stable per-token base vectors (hash-seeded, so they
never depend on process state) plus attribute/position/verb offsets and a
little seeded noise; features therefore correlate with phrase content and
the attention has real signal to learn.

Everything here is a pure function of (seed, size, grammar tables), and the
grammar tables are part of the package: regenerating a corpus with the same
seed is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .config import END_ID, PAD_ID, SPECIAL_TOKENS, START_ID, UNK_ID
from .generator import Paragraph, RegionSet

GRAMMAR_VERSION = 1

NOUNS = ("ball", "bird", "box", "car", "cat", "chair",
         "dog", "house", "lamp", "table", "tree", "truck")
ATTRIBUTES = ("red", "blue", "green", "yellow", "small", "large", "old", "shiny")
POSITIONS = ("left", "right", "center", "corner", "front", "back")
VERBS = ("watches", "faces", "follows", "touches", "guards")
MOODS = ("calm", "busy", "quiet", "lively")


# ---------------------------------------------------------------------------
# scene grammar

@dataclass
class SceneSpec:
    """Abstract scene: attributed, positioned objects plus pairwise relations."""

    objects: list[tuple[str, str, str]]        # (noun, attribute, position)
    relations: list[tuple[int, str, int]]      # (subject index, verb, object index)

    def __post_init__(self):
        if not (2 <= len(self.objects) <= 8):
            raise ValueError(f"scene needs 2..8 objects, got {len(self.objects)}")
        n = len(self.objects)
        for s, verb, o in self.relations:
            if not (0 <= s < n and 0 <= o < n and s != o):
                raise ValueError(f"relation ({s}, {verb!r}, {o}) has invalid indices")


def _stable_vec(kind: str, token: str, dim: int) -> np.ndarray:
    """Deterministic unit-scale vector for a grammar token, independent of any
    process-level RNG state."""
    digest = hashlib.blake2b(f"{kind}:{token}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.normal(0.0, 1.0, dim)


def sample_scene(rng: np.random.Generator) -> SceneSpec:
    n = int(rng.integers(2, 5))
    noun_idx = rng.choice(len(NOUNS), size=n, replace=False)
    objects = [(NOUNS[int(i)],
                ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))],
                POSITIONS[int(rng.integers(len(POSITIONS)))])
               for i in noun_idx]
    relations = []
    if rng.random() < 0.7:
        s, o = rng.choice(n, size=2, replace=False)
        relations.append((int(s), VERBS[int(rng.integers(len(VERBS)))], int(o)))
    return SceneSpec(objects, relations)


def realize_scene(spec: SceneSpec, rng: np.random.Generator,
                  feat_dim: int) -> tuple[list["Region"], list[str], str]:
    """Turn a scene into regions, a description, and a caption.

    One region per object (phrase "attribute noun") and one per relation
    (phrase "noun verb noun"). The description is 2..6 sentences: an overview,
    one sentence per object, the relations, and a closing mood sentence,
    truncated at 6."""
    regions: list[Region] = []
    bases = {}
    for noun, attr, pos in spec.objects:
        base = _stable_vec("noun", noun, feat_dim)
        bases[noun] = base
        feat = (base
                + 0.5 * _stable_vec("attr", attr, feat_dim)
                + 0.25 * _stable_vec("pos", pos, feat_dim)
                + rng.normal(0.0, 0.1, feat_dim))
        regions.append(Region(feat=feat, phrase=f"{attr} {noun}"))
    for s, verb, o in spec.relations:
        noun_s, noun_o = spec.objects[s][0], spec.objects[o][0]
        feat = (0.5 * (bases[noun_s] + bases[noun_o])
                + 0.5 * _stable_vec("verb", verb, feat_dim)
                + rng.normal(0.0, 0.1, feat_dim))
        regions.append(Region(feat=feat, phrase=f"{noun_s} {verb} {noun_o}"))

    (n0, a0, _), (n1, a1, _) = spec.objects[0], spec.objects[1]
    overview = f"the scene shows a {a0} {n0} and a {a1} {n1}"
    sentences = [overview]
    sentences += [f"the {attr} {noun} sits at the {pos}"
                  for noun, attr, pos in spec.objects]
    sentences += [f"the {spec.objects[s][0]} {verb} the {spec.objects[o][0]}"
                  for s, verb, o in spec.relations]
    sentences.append(f"the scene feels {MOODS[int(rng.integers(len(MOODS)))]}")
    return regions, sentences[:6], overview


# ---------------------------------------------------------------------------
# examples and corpora

@dataclass
class Region:
    feat: np.ndarray
    phrase: str


@dataclass
class Example:
    """One corpus entry, text-level (token ids come later, via a Vocabulary)."""

    example_id: str
    regions: list[Region]
    paragraph: list[str] | None = None
    caption: str | None = None


def synth_example(seed: int, feat_dim: int) -> Example:
    rng = np.random.default_rng(seed)
    spec = sample_scene(rng)
    regions, sentences, caption = realize_scene(spec, rng, feat_dim)
    return Example(example_id=f"synth-{seed}", regions=regions,
                   paragraph=sentences, caption=caption)


def make_dataset(seed: int, count: int, feat_dim: int) -> list[Example]:
    if count < 1:
        raise ValueError("dataset size must be >= 1")
    return [synth_example(seed + i, feat_dim) for i in range(count)]


class CorpusFormatError(ValueError):
    def __init__(self, line_no: int, field: str, message: str):
        super().__init__(f"line {line_no}, field {field!r}: {message}")
        self.line_no = line_no
        self.field = field


def save_corpus(path, examples: list[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            obj = {
                "id": ex.example_id,
                "regions": [{"feat": [float(v) for v in r.feat], "phrase": r.phrase}
                            for r in ex.regions],
            }
            if ex.paragraph is not None:
                obj["paragraph"] = ex.paragraph
            if ex.caption is not None:
                obj["caption"] = ex.caption
            fh.write(json.dumps(obj) + "\n")


def load_corpus(path, feat_dim: int | None = None) -> list[Example]:
    out: list[Example] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_no, "-", f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(line_no, "-", "line is not an object")
            if "id" not in obj or not isinstance(obj["id"], str):
                raise CorpusFormatError(line_no, "id", "missing or not a string")
            if "regions" not in obj:
                raise CorpusFormatError(line_no, "regions", "missing")
            if not isinstance(obj["regions"], list) or len(obj["regions"]) == 0:
                raise CorpusFormatError(line_no, "regions", "must be a non-empty list")
            regions = []
            for j, reg in enumerate(obj["regions"]):
                if not isinstance(reg, dict) or "feat" not in reg or "phrase" not in reg:
                    raise CorpusFormatError(line_no, f"regions[{j}]",
                                            "needs 'feat' and 'phrase'")
                feat = reg["feat"]
                if (not isinstance(feat, list)
                        or not all(isinstance(v, (int, float)) for v in feat)):
                    raise CorpusFormatError(line_no, f"regions[{j}].feat",
                                            "must be a list of numbers")
                if feat_dim is not None and len(feat) != feat_dim:
                    raise CorpusFormatError(line_no, f"regions[{j}].feat",
                                            f"length {len(feat)} != expected {feat_dim}")
                if not isinstance(reg["phrase"], str) or not reg["phrase"].strip():
                    raise CorpusFormatError(line_no, f"regions[{j}].phrase",
                                            "must be a non-empty string")
                regions.append(Region(feat=np.asarray(feat, dtype=np.float64),
                                      phrase=reg["phrase"]))
            if feat_dim is None:
                feat_dim = regions[0].feat.shape[0]
                for j, r in enumerate(regions):
                    if r.feat.shape[0] != feat_dim:
                        raise CorpusFormatError(line_no, f"regions[{j}].feat",
                                                f"length {r.feat.shape[0]} != {feat_dim}")
            paragraph = obj.get("paragraph")
            if paragraph is not None:
                if (not isinstance(paragraph, list) or len(paragraph) == 0
                        or not all(isinstance(s, str) and s.strip() for s in paragraph)):
                    raise CorpusFormatError(line_no, "paragraph",
                                            "must be a non-empty list of sentences")
            caption = obj.get("caption")
            if caption is not None and (not isinstance(caption, str) or not caption.strip()):
                raise CorpusFormatError(line_no, "caption", "must be a non-empty string")
            out.append(Example(example_id=obj["id"], regions=regions,
                               paragraph=paragraph, caption=caption))
    return out


def save_paragraph_corpus(path, paragraphs: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in paragraphs:
            fh.write(json.dumps({"paragraph": p}) + "\n")


def load_paragraph_corpus(path) -> list[list[str]]:
    out: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_no, "-", f"invalid JSON: {exc}") from exc
            p = obj.get("paragraph") if isinstance(obj, dict) else None
            if (not isinstance(p, list) or len(p) == 0
                    or not all(isinstance(s, str) and s.strip() for s in p)):
                raise CorpusFormatError(line_no, "paragraph",
                                        "must be a non-empty list of sentences")
            out.append(p)
    return out


# ---------------------------------------------------------------------------
# vocabulary

def normalize(text: str) -> list[str]:
    """Lowercased whitespace tokenization. The grammar controls morphology, so
    nothing fancier is needed, and the same rule is reused for metrics."""
    return text.lower().split()


class Vocabulary:
    """Token/id bijection with fixed special slots (pad 0, start 1, end 2,
    unknown 3) and the remaining tokens assigned in sorted order."""

    def __init__(self, tokens: list[str]):
        for t in tokens:
            if t in SPECIAL_TOKENS:
                raise ValueError(f"token {t!r} collides with a special slot")
        ordered = sorted(set(tokens))
        self._id_to_token: list[str] = list(SPECIAL_TOKENS) + ordered
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        tokens: set[str] = set()
        for text in texts:
            tokens.update(normalize(text))
        if not tokens:
            raise ValueError("cannot build a vocabulary from an empty corpus")
        return cls(sorted(tokens))

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def token_to_id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def id_to_token(self, idx: int) -> str:
        if not (0 <= idx < len(self._id_to_token)):
            raise IndexError(f"id {idx} outside vocabulary of {len(self._id_to_token)}")
        return self._id_to_token[idx]

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id(t) for t in normalize(text)]

    def decode(self, ids: list[int]) -> list[str]:
        """Ids back to words; structural specials (pad/start/end) are dropped,
        the unknown marker is kept visible."""
        out = []
        for i in ids:
            if i in (PAD_ID, START_ID, END_ID):
                continue
            out.append(self.id_to_token(i))
        return out

    def to_dict(self) -> dict:
        return {"tokens": self._id_to_token[len(SPECIAL_TOKENS):]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        if "tokens" not in obj or not isinstance(obj["tokens"], list):
            raise ValueError("vocabulary dict needs a 'tokens' list")
        return cls(list(obj["tokens"]))


def vocab_from_examples(examples: list[Example],
                        paragraphs: list[list[str]] | None = None) -> Vocabulary:
    texts: list[str] = []
    for ex in examples:
        texts.extend(r.phrase for r in ex.regions)
        if ex.paragraph:
            texts.extend(ex.paragraph)
        if ex.caption:
            texts.append(ex.caption)
    for p in paragraphs or []:
        texts.extend(p)
    return Vocabulary.build(texts)


# ---------------------------------------------------------------------------
# encoding to model inputs

@dataclass
class TrainingExample:
    """An example encoded for the model: ids everywhere, end tokens appended
    to supervision sentences (region phrases stay bare fragments)."""

    example_id: str
    regions: RegionSet
    paragraph: Paragraph | None
    caption: list[int] | None


def encode_sentence(vocab: Vocabulary, text: str) -> list[int]:
    """Token ids plus the trailing end token."""
    ids = vocab.encode(text)
    if not ids:
        raise ValueError(f"sentence {text!r} has no tokens")
    return ids + [END_ID]


def encode_example(ex: Example, vocab: Vocabulary) -> TrainingExample:
    regions = RegionSet(
        features=[r.feat for r in ex.regions],
        phrases=[vocab.encode(r.phrase) for r in ex.regions],
    )
    paragraph = None
    if ex.paragraph is not None:
        paragraph = Paragraph([encode_sentence(vocab, s) for s in ex.paragraph])
    caption = encode_sentence(vocab, ex.caption) if ex.caption is not None else None
    return TrainingExample(ex.example_id, regions, paragraph, caption)


def synth_scene(seed: int, feat_dim: int,
                vocab: Vocabulary) -> tuple[RegionSet, Paragraph, list[int]]:
    """One-call synthesis straight to model inputs: region set, groundtruth
    paragraph, and encoded caption sentence."""
    enc = encode_example(synth_example(seed, feat_dim), vocab)
    return enc.regions, enc.paragraph, enc.caption
