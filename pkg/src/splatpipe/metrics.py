"""Embedding-space edit metrics over a pluggable provider.

The three metrics mirror the usual CLIP-style measurements: directional
similarity (image offset vs text offset), cross-view directional
consistency, and edited-render-to-prompt similarity. A deterministic toy
embedder stands in for CLIP at desk scale; a remote provider can supply
real embeddings through the wire protocol without touching this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ImageBuffer

ZERO_NORM_EPS = 1e-12

# Hue bin centers (degrees) for the toy embedder's 12-bin histogram; color
# keywords map straight onto these basis directions.
_HUE_BINS = 12
_LUMA_RES = 8
_HIST_WEIGHT = 4.0
EMBED_DIM = _LUMA_RES * _LUMA_RES + _HUE_BINS  # 76

_COLOR_WORDS = {
    "red": 0.0,
    "orange": 30.0,
    "yellow": 60.0,
    "chartreuse": 90.0,
    "green": 120.0,
    "teal": 150.0,
    "cyan": 180.0,
    "azure": 210.0,
    "blue": 240.0,
    "violet": 270.0,
    "magenta": 300.0,
    "pink": 330.0,
}
_TONE_WORDS = {"white": 1.0, "gray": 0.55, "grey": 0.55, "silver": 0.75, "black": 0.1}


def cosine(a: np.ndarray, b: np.ndarray) -> float | None:
    """Cosine similarity; None when either vector has (near-)zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        return None
    return float(np.dot(a, b) / (na * nb))


def directional_similarity(x, x_hat, text, text_hat, provider) -> float | None:
    """Cosine between the image-edit offset and the text-edit offset.

    None (undefined) when either offset vanishes, so a no-op edit is
    distinguishable from an orthogonal one.
    """
    img_off = provider.embed_image(x_hat) - provider.embed_image(x)
    txt_off = provider.embed_text(text_hat) - provider.embed_text(text)
    return cosine(img_off, txt_off)


def directional_consistency(x_i, x_next, x_hat_i, x_hat_next, provider) -> float | None:
    """Cosine between the edit offsets of two consecutive viewpoints."""
    off_i = provider.embed_image(x_hat_i) - provider.embed_image(x_i)
    off_next = provider.embed_image(x_hat_next) - provider.embed_image(x_next)
    return cosine(off_i, off_next)


def text_similarity(x_hat, prompt: str, provider) -> float | None:
    """Cosine between the edited render's embedding and the prompt's."""
    return cosine(provider.embed_image(x_hat), provider.embed_text(prompt))


class ToyEmbedder:
    """Deterministic CLIP stand-in: spatial luminance plus color histogram.

    Image embedding: an 8x8 area-averaged luminance map concatenated with a
    12-bin hue histogram weighted by saturation (weight 4.0 against the
    luminance block), L2-normalized; D = 76. Text embedding: known color
    and tone keywords activate the matching histogram bin / luminance
    level; unknown words hash to a fixed pseudo-random unit vector.
    """

    dimension = EMBED_DIM

    def embed_image(self, image: ImageBuffer) -> np.ndarray:
        rgb = image.rgb()
        h, w = rgb.shape[:2]
        luma = rgb @ np.array([0.299, 0.587, 0.114])
        ys = np.linspace(0, h, _LUMA_RES + 1).astype(int)
        xs = np.linspace(0, w, _LUMA_RES + 1).astype(int)
        blocks = np.array(
            [
                [luma[ys[i] : ys[i + 1], xs[j] : xs[j + 1]].mean() for j in range(_LUMA_RES)]
                for i in range(_LUMA_RES)
            ]
        )

        from skimage.color import rgb2hsv

        hsv = rgb2hsv(np.clip(rgb, 0.0, 1.0))
        bins = np.minimum((hsv[..., 0] * _HUE_BINS).astype(int), _HUE_BINS - 1)
        hist = np.zeros(_HUE_BINS)
        np.add.at(hist, bins.ravel(), hsv[..., 1].ravel())
        hist /= luma.size

        vec = np.concatenate([blocks.ravel(), _HIST_WEIGHT * hist])
        norm = np.linalg.norm(vec)
        return vec / norm if norm > ZERO_NORM_EPS else vec

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(EMBED_DIM)
        matched = False
        for word in text.lower().replace(",", " ").split():
            if word in _COLOR_WORDS:
                bin_idx = int(_COLOR_WORDS[word] / 360.0 * _HUE_BINS) % _HUE_BINS
                vec[_LUMA_RES * _LUMA_RES + bin_idx] += 1.0
                matched = True
            elif word in _TONE_WORDS:
                vec[: _LUMA_RES * _LUMA_RES] += _TONE_WORDS[word]
                matched = True
        if not matched:
            seed = int.from_bytes(
                __import__("hashlib").sha256(text.encode("utf-8")).digest()[:8], "little"
            )
            vec = np.random.default_rng(seed).standard_normal(EMBED_DIM)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > ZERO_NORM_EPS else vec


def toy_embedder() -> ToyEmbedder:
    return ToyEmbedder()


@dataclass
class MetricReport:
    """Aggregate metrics plus per-view breakdown and stage timings.

    Undefined metrics (zero offsets) are carried as None, never as 0.
    """

    clip_sim: float | None = None
    clip_cons: float | None = None
    clip_text: float | None = None
    per_view: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict)

    def to_json(self, include_timings: bool = False) -> str:
        payload = {
            "clip_sim": self.clip_sim,
            "clip_cons": self.clip_cons,
            "clip_text": self.clip_text,
            "per_view": self.per_view,
        }
        if include_timings:
            payload["timings_s"] = self.timings_s
        return json.dumps(payload, indent=2, sort_keys=True)


def _mean_defined(values):
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def evaluate_edit(
    originals: list[ImageBuffer],
    edited: list[ImageBuffer],
    source_text: str,
    target_text: str,
    prompt: str,
    provider,
) -> MetricReport:
    """All three metrics over an ordered view path (view i and i+1 adjacent)."""
    if len(originals) != len(edited):
        raise ValueError("originals and edited view lists must align")
    sims = [
        directional_similarity(o, e, source_text, target_text, provider)
        for o, e in zip(originals, edited)
    ]
    cons = [
        directional_consistency(originals[i], originals[i + 1], edited[i], edited[i + 1], provider)
        for i in range(len(originals) - 1)
    ]
    texts = [text_similarity(e, prompt, provider) for e in edited]
    return MetricReport(
        clip_sim=_mean_defined(sims),
        clip_cons=_mean_defined(cons),
        clip_text=_mean_defined(texts),
        per_view={
            "clip_sim": sims,
            "clip_cons": cons,
            "clip_text": texts,
        },
    )
