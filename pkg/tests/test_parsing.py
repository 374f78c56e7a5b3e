import json

import pytest
from hypothesis import given, strategies as st

from cexroot.parsing import bullets, extract_json, markdown_sections, section, section_text
from cexroot.prompts import render

json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=5), inner, max_size=3),
    max_leaves=10,
)


@given(st.dictionaries(st.text(max_size=6), json_values, max_size=4), st.text("abc .:\n", max_size=30))
def test_object_survives_surrounding_prose(obj, prose):
    text = f"{prose}\n```json\n{json.dumps(obj)}\n```\n{prose}"
    assert extract_json(text, dict) == obj


def test_first_matching_kind_wins():
    assert extract_json('see [1, 2] and {"a": 1}', dict) == {"a": 1}
    assert extract_json('see [1, 2] and {"a": 1}', list) == [1, 2]


def test_line_comments_tolerated():
    text = '{\n "a": 1, // the first\n "url": "http://x"\n}'
    assert extract_json(text) == {"a": 1, "url": "http://x"}


def test_nothing_to_extract():
    with pytest.raises(ValueError):
        extract_json("plain words {not json")


MD = """## Signal Behavior
steady

**Arguments FOR Being Suspicious (REQUIRED - MIN 2):**
- one
* two
3. three

## Balanced Conclusion
done
"""


def test_sections_and_bullets():
    secs = markdown_sections(MD)
    assert list(secs) == ["signal behavior", "arguments for being suspicious", "balanced conclusion"]
    assert bullets(section(MD, "Arguments FOR")) == ["one", "two", "three"]
    assert section_text(MD, "balanced") == "done"
    assert section(MD, "missing") == []


def test_render_leaves_unknown_braces():
    assert render('{"k": {x}} {y}', x=1) == '{"k": 1} {y}'
