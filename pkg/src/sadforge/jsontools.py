"""Pull JSON objects out of model replies that may wrap them in prose."""

from __future__ import annotations

import json
from typing import Any, Optional


def first_json_object(text: str) -> Optional[dict]:
    """Parse the first balanced ``{...}`` block in text; None when absent.

    Scans left to right and attempts a real JSON parse at every opening
    brace, so `Sure! {"1": "x"}` yields the object while stray braces in
    prose are skipped.
    """
    decoder = json.JSONDecoder()
    for index, char in enumerate(text):
        if char != "{":
            continue
        try:
            value, _ = decoder.raw_decode(text, index)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    return None
