"""Synthetic (dump, manifest) fixtures with known-by-construction geometry.

Each scene plants one rectangle per prompt component: attention for a
token is ``floor`` everywhere and ``peak`` inside its rectangle, identical
across layers/timesteps/heads (optionally with additive noise). Background
words attend to the full frame. After max-normalization the planted values
survive exactly, so with a fixed threshold between floor and peak every
mask is its rectangle and the expected metrics reduce to pixel counting —
computed here directly from the rectangles, independent of the pipeline.

Expected metrics are only emitted for exact scenes: zero noise and
attention stored at full image resolution (upsampling is the identity).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import OffsetToken, PromptSpec, annotate_token_spans, render_prompt
from .dump import AttentionDump, AttentionRecord, write_dump_file
from .manifest import GenerationConfig, Manifest, TokenInfo, save_manifest

BOS = "<s>"
EOS = "</s>"

SYNTH_MODEL_ID = "synthetic-fixture"


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rect {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def indicator(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        m[self.y0:self.y1, self.x0:self.x1] = True
        return m

    def intersect_area(self, other: "Rect") -> int:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0) * max(h, 0)


@dataclass
class SyntheticScene:
    content_rect: Rect
    style_rect: Rect
    word_rect: Rect | None = None  # background-word region; None = full frame
    width: int = 64
    height: int = 64
    latent_width: int | None = None   # None: same as image (identity upsample)
    latent_height: int | None = None
    template_id: int = 1
    content_label: str = "giraffe"
    style_label: str = "cubism"
    style_kind: str = "movement"
    peak: float = 1.0
    floor: float = 0.1
    n_layers: int = 2
    n_steps: int = 2
    n_heads: int = 2
    noise_amplitude: float = 0.0
    seed: int = 0
    guidance: float = 7.5

    def __post_init__(self):
        if not (0.0 <= self.floor < self.peak <= 1.0):
            raise ValueError(
                f"need 0 <= floor < peak <= 1, got floor={self.floor} peak={self.peak}")
        if self.noise_amplitude < 0:
            raise ValueError("noise amplitude must be >= 0")
        for r in (self.content_rect, self.style_rect):
            if not (0 <= r.x0 and r.x1 <= self.width
                    and 0 <= r.y0 and r.y1 <= self.height):
                raise ValueError(f"rect {r} outside {self.width}x{self.height} frame")

    @property
    def exact(self) -> bool:
        lat_w = self.latent_width or self.width
        lat_h = self.latent_height or self.height
        return (self.noise_amplitude == 0.0
                and lat_w == self.width and lat_h == self.height)


@dataclass(frozen=True)
class ExpectedMetrics:
    """Metrics derived from the planted rectangles by direct pixel counting."""

    tau: float
    iou_cs: float | None
    miou_b: float | None
    delta: float | None
    support_c: int
    support_s: int
    n_pairs: int


@dataclass
class SynthFixture:
    scene: SyntheticScene
    dump: AttentionDump
    manifest: Manifest
    expected: ExpectedMetrics | None
    image: np.ndarray  # uint8 (height, width, 3)


def whitespace_tokens(prompt: str) -> list[OffsetToken]:
    """BOS + whitespace-split words with char offsets + EOS."""
    toks = [OffsetToken(text=BOS, special=True)]
    i = 0
    while i < len(prompt):
        if prompt[i].isspace():
            i += 1
            continue
        j = i
        while j < len(prompt) and not prompt[j].isspace():
            j += 1
        toks.append(OffsetToken(text=prompt[i:j], start=i, end=j))
        i = j
    toks.append(OffsetToken(text=EOS, special=True))
    return toks


def expected_metrics(scene: SyntheticScene, tau: float,
                     n_background_words: int) -> ExpectedMetrics:
    """Pixel-counting oracle for an exact scene at a fixed threshold tau.

    Requires floor/peak to straddle tau so each mask is exactly its
    rectangle (background words mask the full frame).
    """
    if not scene.exact:
        raise ValueError("expected metrics are only defined for exact scenes")
    if not (scene.floor / scene.peak < tau <= 1.0):
        raise ValueError(
            f"tau={tau} does not separate normalized floor "
            f"{scene.floor / scene.peak} from peak 1.0")

    c, s = scene.content_rect, scene.style_rect
    word = scene.word_rect or Rect(0, 0, scene.width, scene.height)
    inter = c.intersect_area(s)
    union = c.area + s.area - inter
    iou_cs = None if union == 0 else inter / union

    # every background word pairs once with each component mask
    vals = []
    for comp in (c, s):
        w_inter = comp.intersect_area(word)
        w_union = comp.area + word.area - w_inter
        vals.extend([w_inter / w_union] * n_background_words)
    n_pairs = 2 * n_background_words
    miou_b = sum(vals) / len(vals) if vals else None
    delta = None
    if iou_cs is not None and miou_b is not None:
        delta = miou_b - iou_cs
    return ExpectedMetrics(tau=tau, iou_cs=iou_cs, miou_b=miou_b, delta=delta,
                           support_c=c.area, support_s=s.area, n_pairs=n_pairs)


def _scene_image(scene: SyntheticScene) -> np.ndarray:
    h, w = scene.height, scene.width
    img = np.zeros((h, w, 3), dtype=np.uint8)
    ramp = np.linspace(40, 200, h, dtype=np.float64)[:, None]
    img[:, :, 0] = ramp.astype(np.uint8)
    img[:, :, 1] = np.linspace(60, 180, w, dtype=np.float64)[None, :].astype(np.uint8)
    img[:, :, 2] = 90
    img[scene.content_rect.indicator(h, w)] = (200, 80, 80)
    img[scene.style_rect.indicator(h, w)] = (80, 80, 200)
    return img


def build_fixture(scene: SyntheticScene, dump_path: str = "dump.bin") -> SynthFixture:
    spec = render_prompt(scene.template_id, scene.content_label,
                         scene.style_label, scene.style_kind)
    tokens = whitespace_tokens(spec.prompt_text)
    content_span, style_span = annotate_token_spans(spec, tokens)

    lat_w = scene.latent_width or scene.width
    lat_h = scene.latent_height or scene.height
    n = len(tokens)

    def plant(rect: Rect) -> np.ndarray:
        # rectangles are defined in image pixels; scale to the latent grid
        sx, sy = lat_w / scene.width, lat_h / scene.height
        plane = np.full((lat_h, lat_w), scene.floor, dtype=np.float64)
        plane[round(rect.y0 * sy):round(rect.y1 * sy),
              round(rect.x0 * sx):round(rect.x1 * sx)] = scene.peak
        return plane

    if scene.word_rect is None:
        planes = np.full((lat_h, lat_w, n), scene.peak, dtype=np.float64)
    else:
        planes = np.repeat(plant(scene.word_rect)[:, :, None], n, axis=2)
    for k in range(content_span[0], content_span[1] + 1):
        planes[:, :, k] = plant(scene.content_rect)
    for k in range(style_span[0], style_span[1] + 1):
        planes[:, :, k] = plant(scene.style_rect)

    rng = np.random.default_rng(scene.seed)
    records = []
    for step in range(scene.n_steps):
        for layer in range(scene.n_layers):
            for head in range(scene.n_heads):
                vals = planes
                if scene.noise_amplitude > 0:
                    vals = planes + rng.uniform(
                        -scene.noise_amplitude, scene.noise_amplitude, planes.shape)
                    vals = np.clip(vals, 0.0, 1.0)
                records.append(AttentionRecord(
                    layer_id=layer, timestep=step, head=head,
                    values=vals.astype(np.float32)))

    dump = AttentionDump(records=records, image_width=scene.width,
                         image_height=scene.height, model_id=SYNTH_MODEL_ID,
                         seed=scene.seed)
    manifest = Manifest(
        prompt=spec.prompt_text,
        template_id=scene.template_id,
        tokens=[TokenInfo(text=t.text, special=t.special) for t in tokens],
        content_span=content_span,
        style_span=style_span,
        content_label=scene.content_label,
        style_label=scene.style_label,
        style_kind=scene.style_kind,
        generation=GenerationConfig(steps=scene.n_steps, guidance=scene.guidance,
                                    model_id=SYNTH_MODEL_ID),
        dump_path=dump_path,
    )

    expected = None
    if scene.exact:
        n_words = sum(1 for t in tokens if not t.special)
        span_tokens = (content_span[1] - content_span[0] + 1
                       + style_span[1] - style_span[0] + 1)
        expected = expected_metrics(scene, tau=0.4,
                                    n_background_words=n_words - span_tokens)

    return SynthFixture(scene=scene, dump=dump, manifest=manifest,
                        expected=expected, image=_scene_image(scene))


# --- canonical scenes -------------------------------------------------------

def scene_disjoint(**kw) -> SyntheticScene:
    """Content and style rectangles fully separated: IoU_CS is exactly 0."""
    return SyntheticScene(content_rect=Rect(4, 8, 24, 40),
                          style_rect=Rect(36, 20, 60, 56), **kw)


def scene_entangled(**kw) -> SyntheticScene:
    """Content and style share one rectangle, as do all background words,
    so baseline and pair IoU coincide and delta is exactly 0."""
    return SyntheticScene(content_rect=Rect(16, 16, 48, 48),
                          style_rect=Rect(16, 16, 48, 48),
                          word_rect=Rect(16, 16, 48, 48), **kw)


def scene_half_overlap(**kw) -> SyntheticScene:
    """Equal rectangles overlapping on half their area: IoU_CS = 1/3."""
    return SyntheticScene(content_rect=Rect(8, 16, 32, 48),
                          style_rect=Rect(20, 16, 44, 48), **kw)


_SCENE_LABELS = [("giraffe", "cubism", "movement"),
                 ("bench", "rembrandt", "artist"),
                 ("pizza", "ukiyo-e", "movement"),
                 ("kite", "claude monet", "artist"),
                 ("clock", "baroque", "movement")]


def scene_random(rng: np.random.Generator, index: int,
                 noise_amplitude: float = 0.0,
                 latent_scale: int = 1) -> SyntheticScene:
    """Randomized disjoint-rect scene; rects stay in separate half-frames."""
    width = height = 64
    content, style, kind = _SCENE_LABELS[index % len(_SCENE_LABELS)]

    def rect_in(x_lo, x_hi) -> Rect:
        w = int(rng.integers(8, 20))
        h = int(rng.integers(8, 28))
        x0 = int(rng.integers(x_lo, x_hi - w))
        y0 = int(rng.integers(2, height - h - 2))
        return Rect(x0, y0, x0 + w, y0 + h)

    return SyntheticScene(
        content_rect=rect_in(2, width // 2 - 2),
        style_rect=rect_in(width // 2 + 2, width - 2),
        width=width, height=height,
        latent_width=width // latent_scale, latent_height=height // latent_scale,
        template_id=1 + index % 4,
        content_label=content, style_label=style, style_kind=kind,
        noise_amplitude=noise_amplitude,
        seed=int(rng.integers(0, 2 ** 32)),
    )


# --- fixture corpus on disk -------------------------------------------------

def expected_to_obj(e: ExpectedMetrics) -> dict:
    return {"tau": e.tau, "iou_cs": e.iou_cs, "miou_b": e.miou_b,
            "delta": e.delta, "support_c": e.support_c,
            "support_s": e.support_s, "n_pairs": e.n_pairs}


def write_fixture(fixture: SynthFixture, directory) -> Path:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_dump_file(fixture.dump, directory / fixture.manifest.dump_path)
    save_manifest(fixture.manifest, directory / "manifest.json")
    Image.fromarray(fixture.image, mode="RGB").save(directory / "image.png")
    if fixture.expected is not None:
        with open(directory / "expected.json", "w", encoding="utf-8") as fh:
            json.dump(expected_to_obj(fixture.expected), fh, indent=2)
            fh.write("\n")
    return directory


def synth_corpus(out_dir, n_pairs: int, scene_kind: str = "random",
                 seed: int = 0, noise_amplitude: float = 0.0,
                 latent_scale: int = 1) -> list[Path]:
    """Write ``n_pairs`` fixture directories plus an index.jsonl."""
    makers = {
        "disjoint": lambda rng, i: scene_disjoint(),
        "entangled": lambda rng, i: scene_entangled(),
        "overlap": lambda rng, i: scene_half_overlap(),
        "random": lambda rng, i: scene_random(
            rng, i, noise_amplitude=noise_amplitude, latent_scale=latent_scale),
    }
    if scene_kind not in makers:
        raise ValueError(f"scene kind must be one of {sorted(makers)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    dirs = []
    index_lines = []
    for i in range(n_pairs):
        scene = makers[scene_kind](rng, i)
        fixture = build_fixture(scene)
        pair_dir = write_fixture(fixture, out_dir / f"pair_{i:04d}")
        dirs.append(pair_dir)
        index_lines.append(json.dumps({
            "dir": pair_dir.name,
            "prompt": fixture.manifest.prompt,
            "exact": fixture.expected is not None,
        }))
    with open(out_dir / "index.jsonl", "w", encoding="utf-8") as fh:
        fh.write("\n".join(index_lines) + ("\n" if index_lines else ""))
    return dirs
