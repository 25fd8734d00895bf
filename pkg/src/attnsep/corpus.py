"""Prompt corpus: templated content x style prompts with exact label spans.

Four templates cross a content word with a style descriptor:

    1  "a painting of a {content} in the {style} style"
    2  "a {style} painting of a {content}"
    3  "a {content} in the {style} style"
    4  "a {content} with {style} style"

Prompts are lowercase with no trailing period. Each rendered prompt carries
the character span of both labels, so downstream tokenizations can be mapped
back onto the exact substituted substrings. Bundled label lists: 80 everyday
object categories and 50 painting styles (23 artists + 27 movements).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence, TextIO

VOWELS = "aeiou"

# template bodies as (literal | placeholder) segment chains
_TEMPLATES: dict[int, tuple] = {
    1: ("a painting of a ", "C", " in the ", "S", " style"),
    2: ("a ", "S", " painting of a ", "C"),
    3: ("a ", "C", " in the ", "S", " style"),
    4: ("a ", "C", " with ", "S", " style"),
}

TEMPLATE_IDS = tuple(sorted(_TEMPLATES))


class CorpusError(ValueError):
    pass


class TokenizationMismatch(Exception):
    """Tokenizer offsets cannot be reconciled with a label's char span."""


@dataclass(frozen=True)
class StyleDescriptor:
    label: str
    kind: str  # "artist" | "movement"

    def __post_init__(self):
        if self.kind not in ("artist", "movement"):
            raise CorpusError(f"style kind must be artist|movement, got {self.kind!r}")


@dataclass
class PromptSpec:
    template_id: int
    content_label: str
    style_label: str
    style_kind: str
    prompt_text: str
    content_char_span: tuple[int, int]  # half-open [start, end)
    style_char_span: tuple[int, int]    # half-open [start, end)
    prompt_id: int | None = None

    def content_text(self) -> str:
        s, e = self.content_char_span
        return self.prompt_text[s:e]

    def style_text(self) -> str:
        s, e = self.style_char_span
        return self.prompt_text[s:e]


def _clean_label(label: str, what: str) -> str:
    if not isinstance(label, str) or not label:
        raise CorpusError(f"{what} label must be a non-empty string, got {label!r}")
    if label != label.strip() or any(c in label for c in "\n\r\t{}"):
        raise CorpusError(f"{what} label {label!r} has stray whitespace or braces")
    return label.lower()


def render_prompt(template_id: int, content_label: str, style_label: str,
                  style_kind: str = "movement",
                  fix_articles: bool = False) -> PromptSpec:
    """Substitute both labels into a template, tracking their char spans.

    ``fix_articles`` turns the article immediately before a vowel-initial
    label into "an"; default off, so prompt text is a pure substitution.
    """
    if template_id not in _TEMPLATES:
        raise CorpusError(f"template_id must be one of {TEMPLATE_IDS}, "
                          f"got {template_id}")
    content = _clean_label(content_label, "content")
    style = _clean_label(style_label, "style")
    if style_kind not in ("artist", "movement"):
        raise CorpusError(f"style kind must be artist|movement, got {style_kind!r}")

    pieces: list[tuple[str, str]] = []  # (role, text), role in {lit, C, S}
    for seg in _TEMPLATES[template_id]:
        if seg == "C":
            pieces.append(("C", content))
        elif seg == "S":
            pieces.append(("S", style))
        else:
            pieces.append(("lit", seg))

    if fix_articles:
        for i in range(1, len(pieces)):
            role, text = pieces[i]
            if role == "lit" or not text[0] in VOWELS:
                continue
            prev = pieces[i - 1][1]
            # only a whole-word trailing "a " is an article
            if prev.endswith("a ") and (len(prev) == 2 or prev[-3] == " "):
                pieces[i - 1] = ("lit", prev[:-2] + "an ")

    pos = 0
    spans: dict[str, tuple[int, int]] = {}
    out: list[str] = []
    for role, text in pieces:
        if role in ("C", "S"):
            spans[role] = (pos, pos + len(text))
        out.append(text)
        pos += len(text)

    return PromptSpec(template_id=template_id, content_label=content,
                      style_label=style, style_kind=style_kind,
                      prompt_text="".join(out),
                      content_char_span=spans["C"], style_char_span=spans["S"])


def _check_unique(labels: Sequence[str], what: str) -> None:
    seen: dict[str, int] = {}
    dups = []
    for lab in labels:
        if lab in seen:
            dups.append(lab)
        seen[lab] = seen.get(lab, 0) + 1
    if dups:
        raise CorpusError(f"duplicate {what} labels: {sorted(set(dups))}")


def generate_corpus(contents: Sequence[str], styles: Sequence[StyleDescriptor],
                    template_ids: Sequence[int] = TEMPLATE_IDS,
                    fix_articles: bool = False) -> list[PromptSpec]:
    """Full cross product in deterministic (template, content, style) order.

    Prompt ids number the specs 0..N-1 in that order, so the same inputs
    always produce the same ids.
    """
    contents = [_clean_label(c, "content") for c in contents]
    style_pairs = [(_clean_label(s.label, "style"), s.kind) for s in styles]
    _check_unique(contents, "content")
    _check_unique([lab for lab, _ in style_pairs], "style")
    for tid in template_ids:
        if tid not in _TEMPLATES:
            raise CorpusError(f"unknown template_id {tid}")

    specs: list[PromptSpec] = []
    seen_prompts: set[str] = set()
    next_id = 0
    for tid in template_ids:
        for content in contents:
            for style_label, style_kind in style_pairs:
                spec = render_prompt(tid, content, style_label, style_kind,
                                     fix_articles=fix_articles)
                if spec.prompt_text in seen_prompts:
                    raise CorpusError(
                        f"label sets collide: duplicate prompt {spec.prompt_text!r}")
                seen_prompts.add(spec.prompt_text)
                spec.prompt_id = next_id
                next_id += 1
                specs.append(spec)
    return specs


# --- bundled label lists ----------------------------------------------------

def _data_lines(filename: str) -> list[str]:
    text = resources.files("attnsep.data").joinpath(filename).read_text("utf-8")
    return [ln for ln in text.splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]


def load_bundled_contents() -> list[str]:
    return [ln.strip() for ln in _data_lines("coco_contents.txt")]


def load_bundled_styles() -> list[StyleDescriptor]:
    out = []
    for ln in _data_lines("wikiart_styles.tsv"):
        label, _, kind = ln.partition("\t")
        out.append(StyleDescriptor(label=label.strip(), kind=kind.strip()))
    return out


def load_contents_file(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [ln.strip() for ln in fh
                if ln.strip() and not ln.lstrip().startswith("#")]


def load_styles_file(path) -> list[StyleDescriptor]:
    """One style per line: ``label<TAB>kind`` with kind artist|movement."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, ln in enumerate(fh, 1):
            if not ln.strip() or ln.lstrip().startswith("#"):
                continue
            label, sep, kind = ln.rstrip("\n").partition("\t")
            if not sep:
                raise CorpusError(f"{path}:{i}: expected 'label<TAB>kind'")
            out.append(StyleDescriptor(label=label.strip(), kind=kind.strip()))
    return out


# --- corpus index I/O -------------------------------------------------------

def spec_to_obj(spec: PromptSpec) -> dict:
    return {
        "id": spec.prompt_id,
        "template_id": spec.template_id,
        "content": spec.content_label,
        "style": spec.style_label,
        "style_kind": spec.style_kind,
        "prompt": spec.prompt_text,
        "content_char_span": list(spec.content_char_span),
        "style_char_span": list(spec.style_char_span),
    }


def spec_from_obj(obj: dict) -> PromptSpec:
    return PromptSpec(
        template_id=int(obj["template_id"]),
        content_label=obj["content"],
        style_label=obj["style"],
        style_kind=obj["style_kind"],
        prompt_text=obj["prompt"],
        content_char_span=tuple(obj["content_char_span"]),
        style_char_span=tuple(obj["style_char_span"]),
        prompt_id=obj.get("id"),
    )


def write_corpus_jsonl(specs: Iterable[PromptSpec], stream: TextIO) -> None:
    for spec in specs:
        stream.write(json.dumps(spec_to_obj(spec)))
        stream.write("\n")


def read_corpus_jsonl(stream: TextIO) -> list[PromptSpec]:
    return [spec_from_obj(json.loads(ln)) for ln in stream if ln.strip()]


# --- mapping tokenizer output onto label spans ------------------------------

@dataclass(frozen=True)
class OffsetToken:
    """A tokenizer token with char offsets into the prompt ([start, end))."""

    text: str
    start: int | None = None
    end: int | None = None
    special: bool = False


def _span_token_range(spec: PromptSpec, tokens: Sequence[OffsetToken],
                      char_span: tuple[int, int], what: str) -> tuple[int, int]:
    cs, ce = char_span
    hits: list[int] = []
    for i, tok in enumerate(tokens):
        if tok.special:
            continue
        if tok.start is None or tok.end is None:
            raise TokenizationMismatch(
                f"non-special token {i} ({tok.text!r}) has no char offsets")
        if not (0 <= tok.start < tok.end <= len(spec.prompt_text)):
            raise TokenizationMismatch(
                f"token {i} offsets [{tok.start}, {tok.end}) fall outside the "
                f"{len(spec.prompt_text)}-char prompt")
        if spec.prompt_text[tok.start:tok.end] != tok.text:
            raise TokenizationMismatch(
                f"token {i} text {tok.text!r} does not match prompt chars "
                f"{spec.prompt_text[tok.start:tok.end]!r}")
        if tok.start < ce and tok.end > cs:
            hits.append(i)

    if not hits:
        raise TokenizationMismatch(
            f"no token overlaps the {what} span {char_span} "
            f"({spec.prompt_text[cs:ce]!r})")
    if hits != list(range(hits[0], hits[-1] + 1)):
        raise TokenizationMismatch(
            f"tokens covering the {what} span are not consecutive: {hits}")

    covered = [False] * (ce - cs)
    for i in hits:
        tok = tokens[i]
        if tok.start < cs or tok.end > ce:
            raise TokenizationMismatch(
                f"token {i} ({tok.text!r}, [{tok.start}, {tok.end})) crosses the "
                f"{what} span boundary {char_span}")
        for c in range(tok.start, tok.end):
            covered[c - cs] = True
    for c, done in enumerate(covered):
        if not done and not spec.prompt_text[cs + c].isspace():
            raise TokenizationMismatch(
                f"char {cs + c} ({spec.prompt_text[cs + c]!r}) inside the {what} "
                f"span is not covered by any token")

    return (hits[0], hits[-1])


def annotate_token_spans(spec: PromptSpec, tokens: Sequence[OffsetToken]
                         ) -> tuple[tuple[int, int], tuple[int, int]]:
    """Map label char spans to inclusive token-index spans.

    Every non-special token overlapping a label must sit fully inside it,
    the overlapping tokens must be consecutive, and together they must cover
    every non-whitespace char of the label. Anything else raises
    TokenizationMismatch with a diagnostic.
    """
    content = _span_token_range(spec, tokens, spec.content_char_span, "content")
    style = _span_token_range(spec, tokens, spec.style_char_span, "style")
    if content[0] <= style[1] and style[0] <= content[1]:
        raise TokenizationMismatch(
            f"content token span {content} overlaps style token span {style}")
    return content, style
