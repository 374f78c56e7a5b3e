"""Defensive extraction of structured data from model replies."""

from __future__ import annotations

import json
import re

_decoder = json.JSONDecoder()


def _strip_line_comments(text: str) -> str:
    out = []
    i, n = 0, len(text)
    in_str = False
    while i < n:
        ch = text[i]
        if in_str:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
            out.append(ch)
        elif ch == "/" and text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _decode_at(text: str, i: int):
    try:
        return _decoder.raw_decode(text, i)[0]
    except json.JSONDecodeError:
        pass
    tail = text[i:]
    if "//" in tail:
        try:
            return _decoder.raw_decode(_strip_line_comments(tail))[0]
        except json.JSONDecodeError:
            pass
    return None


def extract_json(text: str, want: type | tuple[type, ...] = (dict, list)):
    """Return the first (outermost) JSON value of type ``want`` found in ``text``.

    Surrounding prose and markdown fences are ignored; ``//`` comments are
    tolerated. Raises ValueError when nothing decodes.
    """
    if not isinstance(want, tuple):
        want = (want,)
    openers = {"{": dict, "[": list}
    for i, ch in enumerate(text):
        kind = openers.get(ch)
        if kind is None or kind not in want:
            continue
        obj = _decode_at(text, i)
        if isinstance(obj, want):
            return obj
    raise ValueError("no JSON value found in reply")


_HEADING = re.compile(r"^\s*(?:#{1,6}\s+(?P<hash>.+?)|\*\*(?P<bold>[^*]+?)\*\*)\s*$")


def markdown_sections(md: str) -> dict[str, list[str]]:
    """Split markdown into ``{heading: body lines}``.

    Headings are ``#``-style lines or whole-line ``**bold**`` labels; the
    heading key is lowercased with any parenthetical suffix removed.
    """
    sections: dict[str, list[str]] = {}
    current = None
    for line in md.splitlines():
        m = _HEADING.match(line)
        if m:
            title = re.sub(r"\(.*?\)", "", m.group("hash") or m.group("bold")).strip().rstrip(":").strip().lower()
            current = title
            sections.setdefault(current, [])
        elif current is not None:
            sections[current].append(line)
    return sections


def bullets(lines: list[str]) -> list[str]:
    out = []
    for line in lines:
        m = re.match(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$", line)
        if m:
            out.append(m.group(1))
    return out


def section(md: str, name: str) -> list[str]:
    """Body lines of the first section whose heading starts with ``name``."""
    name = name.lower()
    for title, body in markdown_sections(md).items():
        if title.startswith(name):
            return body
    return []


def section_text(md: str, name: str) -> str:
    return "\n".join(line for line in section(md, name)).strip()
