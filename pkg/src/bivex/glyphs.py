"""Built-in 5x7 bitmap glyphs for the 36 corpus symbols.

The letterforms are classic LCD-style uppercase, except b/d/n/p/q/u which
use lowercase shapes drawn so that b/q, d/p and n/u (and 6/9) are exact
180-degree rotations of each other, as they nearly are in print. Vertical
words are composed of 90-degree-rotated glyphs, so after routing (another
90 degrees) those pairs collide with upright letters: the corpus keeps the
direction ambiguity that makes the directional supervision matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_RAW = {
    "a": (
        ".###.",
        "#...#",
        "#...#",
        "#####",
        "#...#",
        "#...#",
        "#...#",
    ),
    "b": (
        "#....",
        "#....",
        "####.",
        "#...#",
        "#...#",
        "#...#",
        "####.",
    ),
    "c": (
        ".###.",
        "#...#",
        "#....",
        "#....",
        "#....",
        "#...#",
        ".###.",
    ),
    "d": (
        "....#",
        "....#",
        ".####",
        "#...#",
        "#...#",
        "#...#",
        ".####",
    ),
    "e": (
        "#####",
        "#....",
        "#....",
        "####.",
        "#....",
        "#....",
        "#####",
    ),
    "f": (
        "#####",
        "#....",
        "#....",
        "####.",
        "#....",
        "#....",
        "#....",
    ),
    "g": (
        ".###.",
        "#...#",
        "#....",
        "#.###",
        "#...#",
        "#...#",
        ".####",
    ),
    "h": (
        "#...#",
        "#...#",
        "#...#",
        "#####",
        "#...#",
        "#...#",
        "#...#",
    ),
    "i": (
        ".###.",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
        ".###.",
    ),
    "j": (
        "..###",
        "...#.",
        "...#.",
        "...#.",
        "...#.",
        "#..#.",
        ".##..",
    ),
    "k": (
        "#...#",
        "#..#.",
        "#.#..",
        "##...",
        "#.#..",
        "#..#.",
        "#...#",
    ),
    "l": (
        "#....",
        "#....",
        "#....",
        "#....",
        "#....",
        "#....",
        "#####",
    ),
    "m": (
        "#...#",
        "##.##",
        "#.#.#",
        "#.#.#",
        "#...#",
        "#...#",
        "#...#",
    ),
    "n": (
        ".....",
        "####.",
        "#...#",
        "#...#",
        "#...#",
        "#...#",
        ".....",
    ),
    "o": (
        ".###.",
        "#...#",
        "#...#",
        "#...#",
        "#...#",
        "#...#",
        ".###.",
    ),
    "p": (
        "####.",
        "#...#",
        "#...#",
        "#...#",
        "####.",
        "#....",
        "#....",
    ),
    "q": (
        ".####",
        "#...#",
        "#...#",
        "#...#",
        ".####",
        "....#",
        "....#",
    ),
    "r": (
        "####.",
        "#...#",
        "#...#",
        "####.",
        "#.#..",
        "#..#.",
        "#...#",
    ),
    "s": (
        ".####",
        "#....",
        "#....",
        ".###.",
        "....#",
        "....#",
        "####.",
    ),
    "t": (
        "#####",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
    ),
    "u": (
        ".....",
        "#...#",
        "#...#",
        "#...#",
        "#...#",
        ".####",
        ".....",
    ),
    "v": (
        "#...#",
        "#...#",
        "#...#",
        "#...#",
        "#...#",
        ".#.#.",
        "..#..",
    ),
    "w": (
        "#...#",
        "#...#",
        "#...#",
        "#.#.#",
        "#.#.#",
        "##.##",
        "#...#",
    ),
    "x": (
        "#...#",
        "#...#",
        ".#.#.",
        "..#..",
        ".#.#.",
        "#...#",
        "#...#",
    ),
    "y": (
        "#...#",
        "#...#",
        ".#.#.",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
    ),
    "z": (
        "#####",
        "....#",
        "...#.",
        "..#..",
        ".#...",
        "#....",
        "#####",
    ),
    "0": (
        ".###.",
        "#...#",
        "#..##",
        "#.#.#",
        "##..#",
        "#...#",
        ".###.",
    ),
    "1": (
        "..#..",
        ".##..",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
        ".###.",
    ),
    "2": (
        ".###.",
        "#...#",
        "....#",
        "...#.",
        "..#..",
        ".#...",
        "#####",
    ),
    "3": (
        ".###.",
        "#...#",
        "....#",
        "..##.",
        "....#",
        "#...#",
        ".###.",
    ),
    "4": (
        "...#.",
        "..##.",
        ".#.#.",
        "#..#.",
        "#####",
        "...#.",
        "...#.",
    ),
    "5": (
        "#####",
        "#....",
        "####.",
        "....#",
        "....#",
        "#...#",
        ".###.",
    ),
    "6": (
        ".###.",
        "#....",
        "#....",
        "####.",
        "#...#",
        "#...#",
        ".###.",
    ),
    "7": (
        "#####",
        "....#",
        "...#.",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
    ),
    "8": (
        ".###.",
        "#...#",
        "#...#",
        ".###.",
        "#...#",
        "#...#",
        ".###.",
    ),
    "9": (
        ".###.",
        "#...#",
        "#...#",
        ".####",
        "....#",
        "....#",
        ".###.",
    ),
}

# 180-degree-rotation letter pairs baked into the font by design.
ROTATION_PAIRS = (("b", "q"), ("d", "p"), ("n", "u"), ("m", "w"), ("6", "9"))


@dataclass(frozen=True)
class GlyphSet:
    """Per-symbol monochrome bitmaps, all on the same grid."""

    grids: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = {g.shape for g in self.grids.values()}
        if len(shapes) != 1:
            raise ValueError(f"glyphs are not on a single grid: {sorted(shapes)}")

    @property
    def height(self) -> int:
        return next(iter(self.grids.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.grids.values())).shape[1]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.grids

    def glyph(self, symbol: str) -> np.ndarray:
        try:
            return self.grids[symbol]
        except KeyError:
            raise ValueError(f"no glyph for symbol {symbol!r}") from None

    def scaled(self, factor: int) -> "GlyphSet":
        """Integer nearest upscaling of every bitmap."""
        if factor < 1:
            raise ValueError("scale factor must be >= 1")
        if factor == 1:
            return self
        return GlyphSet(
            grids={s: np.repeat(np.repeat(g, factor, axis=0), factor, axis=1) for s, g in self.grids.items()}
        )


def _parse(rows: tuple[str, ...]) -> np.ndarray:
    return np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)


def default_glyphs(scale: int = 1) -> GlyphSet:
    base = GlyphSet(grids={sym: _parse(rows) for sym, rows in _RAW.items()})
    return base.scaled(scale)
