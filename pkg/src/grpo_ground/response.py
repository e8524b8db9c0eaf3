"""Response grammar: the serializer and parser shared by the policy renderer,
the reward functions, and the external scoring CLI.

Canonical form, with T free text not containing the literal ``</think>``::

    <think>T</think><answer>(x1, y1), (x2, y2)</answer>

The four numbers are base-10 integers (bin indices on a G-point grid) or
non-negative digit-leading decimals. Nothing may precede ``<think>`` and
nothing but whitespace may follow ``</answer>``. Integer bin k maps to the
coordinate k/(G-1); decimal tokens are taken as already-normalized
coordinates. Either way the result is clamped into [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .geometry import BBox

THINK_CLOSE = "</think>"
ANSWER_CLOSE = "</answer>"

_NUM = r"\d+(?:\.\d+)?"
_GRAMMAR_RE = re.compile(
    r"\A<think>(?P<think>.*?)</think>"
    r"<answer>\((?P<x1>%(n)s), (?P<y1>%(n)s)\), \((?P<x2>%(n)s), (?P<y2>%(n)s)\)</answer>"
    r"\s*\Z" % {"n": _NUM},
    re.DOTALL,
)
# Lenient recovery of a coordinate pair-of-pairs anywhere in malformed text.
_SALVAGE_RE = re.compile(
    r"\(\s*(%(n)s)\s*,\s*(%(n)s)\s*\)\s*,\s*\(\s*(%(n)s)\s*,\s*(%(n)s)\s*\)" % {"n": _NUM}
)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)

_INSTRUCTION = (
    "First output the thinking process in <think> </think> tags and then "
    "output the bounding box in <answer> </answer> tags."
)


@dataclass(frozen=True)
class ParsedResponse:
    think_text: str
    box: BBox | None
    format_ok: bool


def render(think_text: str, bins: tuple[int, int, int, int], corrupt: bool = False) -> str:
    """Serialize bin indices into the canonical grammar string.

    corrupt=True emits the deterministic corruption used by the policy's
    format head: the canonical string minus its closing ``</answer>`` tag.
    """
    if THINK_CLOSE in think_text:
        raise ValueError("unserializable reasoning text (contains '</think>')")
    x1, y1, x2, y2 = (int(b) for b in bins)
    text = f"<think>{think_text}</think><answer>({x1}, {y1}), ({x2}, {y2})</answer>"
    if corrupt:
        return text[: -len(ANSWER_CLOSE)]
    return text


def _coordinate(token: str, bins_per_axis: int) -> float:
    if "." in token:
        value = float(token)
    else:
        value = int(token) / (bins_per_axis - 1)
    return min(1.0, max(0.0, value))


def parse(text: str, bins_per_axis: int) -> ParsedResponse:
    """Total parser: any input yields a ParsedResponse, never an exception.

    format_ok is true iff the full grammar matches. When it does not but a
    ``(a, b), (c, d)`` pattern is recoverable anywhere in the text, the box
    is still populated (salvage rule) with format_ok false.
    """
    if bins_per_axis < 2:
        raise ValueError(f"bins_per_axis must be >= 2, got {bins_per_axis}")
    m = _GRAMMAR_RE.match(text)
    if m is not None:
        coords = [_coordinate(m.group(k), bins_per_axis) for k in ("x1", "y1", "x2", "y2")]
        return ParsedResponse(think_text=m.group("think"), box=BBox(*coords), format_ok=True)

    think = _THINK_RE.search(text)
    think_text = think.group(1) if think is not None else ""
    salvage = _SALVAGE_RE.search(text)
    if salvage is None:
        return ParsedResponse(think_text=think_text, box=None, format_ok=False)
    coords = [_coordinate(tok, bins_per_axis) for tok in salvage.groups()]
    return ParsedResponse(think_text=think_text, box=BBox(*coords), format_ok=False)


def canonical_instruction() -> str:
    """The verbatim instruction suffix appended to every stage-2 prompt."""
    return _INSTRUCTION
