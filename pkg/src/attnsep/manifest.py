"""Prompt manifests: the JSON sidecar that travels with every dump file.

A manifest records what was generated (prompt, tokenization, which token
index ranges carry the content word and the style descriptor) and how
(sampler steps, guidance, model). Token spans are inclusive index pairs
into the dump's token axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .dump import AttentionDump

STYLE_KINDS = ("artist", "movement")


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class TokenInfo:
    text: str
    special: bool = False


@dataclass(frozen=True)
class GenerationConfig:
    steps: int
    guidance: float
    model_id: str


@dataclass
class Manifest:
    prompt: str
    template_id: int
    tokens: list[TokenInfo]
    content_span: tuple[int, int]  # inclusive token indices
    style_span: tuple[int, int]    # inclusive token indices
    content_label: str
    style_label: str
    style_kind: str
    generation: GenerationConfig
    dump_path: str = "dump.bin"

    def span_tokens(self, span: tuple[int, int]) -> list[TokenInfo]:
        return self.tokens[span[0]:span[1] + 1]


def manifest_to_obj(m: Manifest) -> dict:
    return {
        "prompt": m.prompt,
        "template_id": m.template_id,
        "tokens": [{"text": t.text, "special": t.special} for t in m.tokens],
        "content_span": list(m.content_span),
        "style_span": list(m.style_span),
        "content_label": m.content_label,
        "style_label": m.style_label,
        "style_kind": m.style_kind,
        "generation": {
            "steps": m.generation.steps,
            "guidance": m.generation.guidance,
            "model_id": m.generation.model_id,
        },
        "dump_path": m.dump_path,
    }


def _span_from_obj(obj, name: str) -> tuple[int, int]:
    if (not isinstance(obj, (list, tuple)) or len(obj) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in obj)):
        raise ManifestError(f"{name} must be a [start, end] pair of integers, got {obj!r}")
    return (obj[0], obj[1])


def manifest_from_obj(obj: dict) -> Manifest:
    """Build a Manifest from parsed JSON, checking structure but not semantics.

    Semantic problems (bad spans, special tokens inside spans, ...) are left
    to validate_pair so that they are reported, not raised.
    """
    try:
        tokens = [TokenInfo(text=t["text"], special=bool(t["special"]))
                  for t in obj["tokens"]]
        gen = obj["generation"]
        return Manifest(
            prompt=obj["prompt"],
            template_id=int(obj["template_id"]),
            tokens=tokens,
            content_span=_span_from_obj(obj["content_span"], "content_span"),
            style_span=_span_from_obj(obj["style_span"], "style_span"),
            content_label=obj["content_label"],
            style_label=obj["style_label"],
            style_kind=obj["style_kind"],
            generation=GenerationConfig(
                steps=int(gen["steps"]),
                guidance=float(gen["guidance"]),
                model_id=str(gen["model_id"]),
            ),
            dump_path=obj.get("dump_path", "dump.bin"),
        )
    except ManifestError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest: {exc!r}") from exc


def save_manifest(m: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_obj(m), fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ManifestError("manifest top level must be a JSON object")
    return manifest_from_obj(obj)


@dataclass(frozen=True)
class Finding:
    """One validation problem. ``code`` is stable, ``message`` is for humans."""
    code: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, code: str, message: str) -> None:
        self.findings.append(Finding(code, message))

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]


def _check_span(report: ValidationReport, m: Manifest, span: tuple[int, int],
                name: str) -> bool:
    """Returns True if the span is usable for further checks."""
    start, end = span
    n = len(m.tokens)
    if start > end:
        report.add("empty_span", f"{name} [{start}, {end}] is empty (start > end)")
        return False
    if start < 0 or end >= n:
        report.add("span_out_of_range",
                   f"{name} [{start}, {end}] falls outside the {n} manifest tokens")
        return False
    for i in range(start, end + 1):
        if m.tokens[i].special:
            report.add("special_token_in_span",
                       f"{name} covers special token {i} ({m.tokens[i].text!r})")
            return False
    return True


def validate_pair(dump: AttentionDump, manifest: Manifest) -> ValidationReport:
    """Cross-check a (dump, manifest) pair. Classifies, never raises."""
    report = ValidationReport()

    if manifest.template_id not in (1, 2, 3, 4):
        report.add("invalid_template_id",
                   f"template_id {manifest.template_id} is not in {{1, 2, 3, 4}}")
    if manifest.style_kind not in STYLE_KINDS:
        report.add("invalid_style_kind",
                   f"style_kind {manifest.style_kind!r} is not one of {STYLE_KINDS}")
    if not manifest.tokens:
        report.add("no_tokens", "manifest lists no tokens")

    if dump.n_tokens != len(manifest.tokens):
        report.add("token_count_mismatch",
                   f"dump has n_tokens={dump.n_tokens} but manifest lists "
                   f"{len(manifest.tokens)} tokens")

    c_ok = _check_span(report, manifest, manifest.content_span, "content_span")
    s_ok = _check_span(report, manifest, manifest.style_span, "style_span")
    if c_ok and s_ok:
        c0, c1 = manifest.content_span
        s0, s1 = manifest.style_span
        if c0 <= s1 and s0 <= c1:
            report.add("overlapping_spans",
                       f"content_span [{c0}, {c1}] overlaps style_span [{s0}, {s1}]")
    return report
