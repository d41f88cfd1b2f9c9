"""Fixed glyph atlas: one bitmap per symbol sub-class plus a 5x7 bitmap font.

Glyphs are boolean arrays indexed ``[row, col]``. Heads carry a direction;
the atlas stores them pointing right (+x) and :func:`head_glyph` rotates.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

FONT_SCALE = 2
CHAR_GAP = 2

_FONT_ROWS = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "C": ["01110", "10001", "10000", "10000", "10000", "10001", "01110"],
    "D": ["11100", "10010", "10001", "10001", "10001", "10010", "11100"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "G": ["01110", "10001", "10000", "10111", "10001", "10001", "01111"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "I": ["01110", "00100", "00100", "00100", "00100", "00100", "01110"],
    "J": ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "10001", "11001", "10101", "10011", "10001", "10001"],
    "O": ["11111", "10001", "10001", "10001", "10001", "10001", "11111"],
    "P": ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
    "Q": ["01110", "10001", "10001", "10001", "10101", "10010", "01101"],
    "R": ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "U": ["10001", "10001", "10001", "10001", "10001", "10001", "01110"],
    "V": ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
    "W": ["10001", "10001", "10001", "10101", "10101", "10101", "01010"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
    "Y": ["10001", "10001", "10001", "01010", "00100", "00100", "00100"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
    "a": ["00000", "00000", "01110", "00001", "01111", "10001", "01111"],
    "e": ["00000", "00000", "01110", "10001", "11111", "10000", "01110"],
    "k": ["10000", "10000", "10010", "10100", "11000", "10100", "10010"],
    "m": ["00000", "00000", "11010", "10101", "10101", "10001", "10001"],
    "n": ["00000", "00000", "10110", "11001", "10001", "10001", "10001"],
    "r": ["00000", "00000", "10110", "11001", "10000", "10000", "10000"],
    "x": ["00000", "00000", "10001", "01010", "00100", "01010", "10001"],
    "y": ["00000", "00000", "10001", "10001", "01111", "00001", "01110"],
    "°": ["01100", "10010", "10010", "01100", "00000", "00000", "00000"],
    "=": ["00000", "00000", "11111", "00000", "11111", "00000", "00000"],
}

FONT_CHARS = "".join(_FONT_ROWS)


def _rows(rows) -> np.ndarray:
    return np.array([[c == "1" for c in r] for r in rows], dtype=bool)


def _scale(a: np.ndarray, k: int) -> np.ndarray:
    return np.kron(a, np.ones((k, k), dtype=bool))


def tight(a: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(a.any(axis=1))
    cols = np.flatnonzero(a.any(axis=0))
    if rows.size == 0:
        return a[:0, :0]
    return a[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


@lru_cache(maxsize=None)
def char_cell(ch: str) -> np.ndarray:
    """Full scaled 5x7 cell for a character (keeps baseline placement)."""
    if ch not in _FONT_ROWS:
        raise KeyError(f"character {ch!r} not in the atlas font")
    return _scale(_rows(_FONT_ROWS[ch]), FONT_SCALE)


@lru_cache(maxsize=None)
def char_glyph(ch: str) -> np.ndarray:
    return tight(char_cell(ch))


def render_text(content: str) -> np.ndarray:
    """Bitmap for a string, tight-cropped. Characters are set proportionally:
    each keeps its full cell height and is trimmed to its inked columns."""
    h = 7 * FONT_SCALE
    cols = []
    for ch in content:
        cell = char_cell(ch)
        used = np.flatnonzero(cell.any(axis=0))
        if cols:
            cols.append(np.zeros((h, CHAR_GAP), dtype=bool))
        cols.append(cell[:, used[0] : used[-1] + 1])
    if not cols:
        return np.zeros((0, 0), dtype=bool)
    return tight(np.hstack(cols))


def _stroke_bars(k: int, width=2, height=12, gap=3) -> np.ndarray:
    out = np.zeros((height, k * width + (k - 1) * gap), dtype=bool)
    for i in range(k):
        x = i * (width + gap)
        out[:, x : x + width] = True
    return out


def _chevron(w: int, h: int, t: int = 2) -> np.ndarray:
    """'>' shape w wide, h tall."""
    out = np.zeros((h, w), dtype=bool)
    mid = (h - 1) / 2.0
    for r in range(h):
        c = int(round((1 - abs(r - mid) / mid) * (w - t)))
        out[r, c : c + t] = True
    return out


def _parallel(k: int) -> np.ndarray:
    ch = _chevron(6, 11)
    gap = 3
    out = np.zeros((11, k * 6 + (k - 1) * gap), dtype=bool)
    for i in range(k):
        out[:, i * (6 + gap) : i * (6 + gap) + 6] |= ch
    return out


def _angle(k: int) -> np.ndarray:
    # k stacked caret marks '^'
    caret = np.rot90(_chevron(5, 11), 1)
    h, w = caret.shape
    gap = 3
    out = np.zeros((k * h + (k - 1) * gap, w), dtype=bool)
    for i in range(k):
        out[i * (h + gap) : i * (h + gap) + h] |= caret
    return out


def _perpendicular() -> np.ndarray:
    out = np.zeros((12, 12), dtype=bool)
    out[:, 5:7] = True
    out[10:12, :] = True
    return out


def _head() -> np.ndarray:
    out = np.zeros((11, 10), dtype=bool)
    for r in range(11):
        half = 5 - abs(r - 5)
        out[r, : 2 * half] = True
    return tight(out)


def _head_len() -> np.ndarray:
    out = np.zeros((11, 12), dtype=bool)
    for r in range(11):
        half = 5 - abs(r - 5)
        c = 2 * half
        out[r, max(c - 2, 0) : c] = True
    out[0:2, 0:10] = False
    out[:, 0:2] = True
    out[:, 10:12] = True
    return tight(out)


@lru_cache(maxsize=None)
def symbol_glyph(cls: str) -> np.ndarray:
    k = {"double": 2, "triple": 3, "quad": 4, "penta": 5}
    parts = cls.split()
    mult = k[parts[0]] if len(parts) == 2 else 1
    base = parts[-1]
    if base == "perpendicular":
        return _perpendicular()
    if base == "angle":
        return _angle(mult)
    if base == "bar":
        return _stroke_bars(mult)
    if base == "parallel":
        return _parallel(mult)
    if base == "head":
        return _head()
    if base == "head_len":
        return _head_len()
    raise KeyError(f"no glyph for symbol class {cls!r}")


HEAD_DIRECTIONS: Dict[int, Tuple[int, int]] = {0: (1, 0), 1: (0, -1), 2: (-1, 0), 3: (0, 1)}


def head_glyph(cls: str, quarter_turns: int) -> np.ndarray:
    """Head glyph rotated counter-clockwise (as displayed) by 90 deg steps."""
    return np.rot90(symbol_glyph(cls), quarter_turns % 4)


def direction_to_turns(dx: float, dy: float) -> int:
    best = max(HEAD_DIRECTIONS, key=lambda k: HEAD_DIRECTIONS[k][0] * dx + HEAD_DIRECTIONS[k][1] * dy)
    return best
