"""Parametric bitmap-glyph word renderer and one-hot text encoding.

Glyphs are 5x9 cell bitmaps (two ascender rows, five x-height rows, two
descender rows). A word is drawn on a 4x supersampled canvas with shear,
per-letter baseline jitter and stroke dilation, box-filtered down, then
given clipped Gaussian ink noise. Pixel values are quantized to k/255 so a
PGM round trip is exact.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .textgen import Alphabet

CANVAS_HEIGHT = 32
CANVAS_WIDTH = 256
SUPERSAMPLE = 4
CELL_H = 2.3
# Horizontal glyph cell in pixels. It does not scale with style: a glyph plus
# its one-cell gap advances exactly 8 px, one recognizer time step, so the
# k-th character lands on the k-th feature row.
CELL_W = 8.0 / 6.0
LEFT_MARGIN = 1.0

SLANT_RANGE = (-0.35, 0.35)
THICKNESS_RANGE = (1.0, 3.0)
JITTER_RANGE = (0.0, 2.0)
SCALE_RANGE = (0.8, 1.2)
NOISE_RANGE = (0.0, 0.1)

_GLYPH_ROWS = {
    "a": ".....|.....|.###.|....#|.####|#...#|.####|.....|.....",
    "b": "#....|#....|####.|#...#|#...#|#...#|####.|.....|.....",
    "c": ".....|.....|.####|#....|#....|#....|.####|.....|.....",
    "d": "....#|....#|.####|#...#|#...#|#...#|.####|.....|.....",
    "e": ".....|.....|.###.|#...#|#####|#....|.####|.....|.....",
    "f": "..##.|.#...|####.|.#...|.#...|.#...|.#...|.....|.....",
    "g": ".....|.....|.####|#...#|#...#|.####|....#|....#|.###.",
    "h": "#....|#....|####.|#...#|#...#|#...#|#...#|.....|.....",
    "i": "..#..|.....|.##..|..#..|..#..|..#..|.###.|.....|.....",
    "j": "...#.|.....|..##.|...#.|...#.|...#.|...#.|#..#.|.##..",
    "k": "#....|#....|#..#.|#.#..|##...|#.#..|#..#.|.....|.....",
    "l": ".##..|..#..|..#..|..#..|..#..|..#..|.###.|.....|.....",
    "m": ".....|.....|##.#.|#.#.#|#.#.#|#.#.#|#.#.#|.....|.....",
    "n": ".....|.....|####.|#...#|#...#|#...#|#...#|.....|.....",
    "o": ".....|.....|.###.|#...#|#...#|#...#|.###.|.....|.....",
    "p": ".....|.....|####.|#...#|#...#|####.|#....|#....|#....",
    "q": ".....|.....|.####|#...#|#...#|.####|....#|....#|....#",
    "r": ".....|.....|#.##.|##..#|#....|#....|#....|.....|.....",
    "s": ".....|.....|.####|#....|.###.|....#|####.|.....|.....",
    "t": ".#...|.#...|####.|.#...|.#...|.#..#|..##.|.....|.....",
    "u": ".....|.....|#...#|#...#|#...#|#..##|.##.#|.....|.....",
    "v": ".....|.....|#...#|#...#|#...#|.#.#.|..#..|.....|.....",
    "w": ".....|.....|#...#|#...#|#.#.#|#.#.#|.#.#.|.....|.....",
    "x": ".....|.....|#...#|.#.#.|..#..|.#.#.|#...#|.....|.....",
    "y": ".....|.....|#...#|#...#|#...#|.####|....#|....#|.###.",
    "z": ".....|.....|#####|...#.|..#..|.#...|#####|.....|.....",
    " ": ".....|.....|.....|.....|.....|.....|.....|.....|.....",
}
GLYPHS = {
    ch: np.array([[c == "#" for c in row] for row in rows.split("|")], dtype=bool)
    for ch, rows in _GLYPH_ROWS.items()
}
GLYPH_ROWS, GLYPH_COLS = 9, 5


class RenderError(ValueError):
    """The text cannot be drawn (unknown glyph or too wide for the canvas)."""


@dataclass(frozen=True)
class StyleParams:
    slant: float = 0.0
    stroke_thickness: float = 1.0
    baseline_jitter: float = 0.0
    scale: float = 1.0
    ink_noise: float = 0.0

    def __post_init__(self):
        for name, (lo, hi) in (
            ("slant", SLANT_RANGE),
            ("stroke_thickness", THICKNESS_RANGE),
            ("baseline_jitter", JITTER_RANGE),
            ("scale", SCALE_RANGE),
            ("ink_noise", NOISE_RANGE),
        ):
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_style(rng: np.random.Generator) -> StyleParams:
    return StyleParams(
        slant=float(rng.uniform(*SLANT_RANGE)),
        stroke_thickness=float(rng.uniform(*THICKNESS_RANGE)),
        baseline_jitter=float(rng.uniform(*JITTER_RANGE)),
        scale=float(rng.uniform(*SCALE_RANGE)),
        ink_noise=float(rng.uniform(*NOISE_RANGE)),
    )


def layout_width(n_chars: int, style: StyleParams, height: int = CANVAS_HEIGHT) -> float:
    cw, ch = CELL_W, CELL_H * style.scale
    shear = abs(np.tan(style.slant)) * (GLYPH_ROWS * ch / 2 + 2.0)
    return LEFT_MARGIN + 2 * shear + n_chars * GLYPH_COLS * cw + (n_chars - 1) * cw


def render_word(text: str, style: StyleParams, rng: np.random.Generator,
                height: int = CANVAS_HEIGHT, width: int = CANVAS_WIDTH) -> np.ndarray:
    """Draw ``text`` as an H×W grayscale image in [0, 1] (1 = ink)."""
    if not text:
        raise RenderError("cannot render empty text")
    for c in text:
        if c not in GLYPHS:
            raise RenderError(f"no glyph for character {c!r}")
    if layout_width(len(text), style, height) > width:
        raise RenderError(f"{text!r} ({len(text)} chars) overflows a {width}px canvas at this style")

    ss = SUPERSAMPLE
    cw, ch = CELL_W, CELL_H * style.scale
    tan = np.tan(style.slant)
    shear = abs(tan) * (GLYPH_ROWS * ch / 2 + 2.0)
    ys = (np.arange(height * ss) + 0.5) / ss
    xs = (np.arange(width * ss) + 0.5) / ss
    offsets = np.clip(rng.normal(0.0, 1.0, len(text)) * style.baseline_jitter, -3.0, 3.0)

    hi = np.zeros((height * ss, width * ss), dtype=bool)
    top0 = (height - GLYPH_ROWS * ch) / 2
    for i, c in enumerate(text):
        glyph = GLYPHS[c]
        left = LEFT_MARGIN + shear + i * (GLYPH_COLS + 1) * cw
        gy = np.floor((ys - top0 - offsets[i]) / ch).astype(int)
        rows = (gy >= 0) & (gy < GLYPH_ROWS)
        if not rows.any():
            continue
        r_idx = np.nonzero(rows)[0]
        shift = (height / 2 - ys[r_idx]) * tan
        lo = max(0, int((left - shear - 1) * ss))
        up = min(width * ss, int(np.ceil((left + shear + GLYPH_COLS * cw + 1) * ss)))
        gx = np.floor((xs[None, lo:up] - left - shift[:, None]) / cw).astype(int)
        inside = (gx >= 0) & (gx < GLYPH_COLS)
        ink = np.zeros_like(inside)
        ink[inside] = glyph[np.broadcast_to(gy[r_idx][:, None], gx.shape)[inside], gx[inside]]
        hi[r_idx, lo:up] |= ink

    grow = 1 + int(round((style.stroke_thickness - 1.0) * 0.5 * ss))
    # only the inked span needs dilation and box filtering
    used = min(width, int(np.ceil(layout_width(len(text), style, height))) + 2)
    ink = hi[:, :used * ss].astype(np.float64)
    if grow > 1:
        ink = maximum_filter(ink, size=grow, mode="constant")
    img = np.zeros((height, width))
    img[:, :used] = ink.reshape(height, ss, used, ss).mean(axis=(1, 3))
    if style.ink_noise > 0:
        img = img + rng.normal(0.0, style.ink_noise, img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def random_style_renderer(height: int = CANVAS_HEIGHT, width: int = CANVAS_WIDTH):
    """A ``(text, rng) -> image`` callable drawing a fresh random style per call."""
    def render(text: str, rng: np.random.Generator) -> np.ndarray:
        return render_word(text, sample_style(rng), rng, height, width)
    return render


def one_hot_encode(text: str, alphabet: Alphabet, steps: int) -> np.ndarray:
    """steps×A matrix: row i is the indicator of text[i]; rows past the text are zero."""
    if not text:
        raise ValueError("cannot encode empty text")
    if len(text) > steps:
        raise ValueError(f"text of length {len(text)} exceeds {steps} rows")
    out = np.zeros((steps, alphabet.size))
    out[np.arange(len(text)), alphabet.encode(text)] = 1.0
    return out


# ---------------------------------------------------------------------------
# binary PGM (P5, 8-bit)


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Store ink intensity directly as the gray level (255 = full ink)."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    levels = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + levels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / 255.0
