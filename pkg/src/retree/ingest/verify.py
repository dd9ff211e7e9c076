"""Exact-match grading for integer-answer math problems."""

from __future__ import annotations

import re
from typing import Callable, Optional

Verifier = Callable[[str], bool]

_INT = re.compile(r"[-+]?\d+")
# an integer not glued to letters, other digits, or a decimal part
_STANDALONE_INT = re.compile(r"(?<![\w.])[-+]?\d+(?![\w]|\.\d)")


def last_boxed(text: str) -> Optional[str]:
    """Contents of the last ``\\boxed{...}``, honouring nested braces."""
    start = text.rfind("\\boxed")
    while start != -1:
        i = start + len("\\boxed")
        while i < len(text) and text[i] == " ":
            i += 1
        if i < len(text) and text[i] == "{":
            depth = 0
            for j in range(i, len(text)):
                if text[j] == "{":
                    depth += 1
                elif text[j] == "}":
                    depth -= 1
                    if depth == 0:
                        return text[i + 1 : j]
            return None
        start = text.rfind("\\boxed", 0, start)
    return None


def extract_integer(text: str) -> Optional[int]:
    boxed = last_boxed(text)
    if boxed is not None:
        s = boxed.strip().strip("$").replace(",", "").replace("\\!", "").replace(" ", "")
        return int(s) if _INT.fullmatch(s) else None
    # thousands separators: 1,234 -> 1234
    flat = re.sub(r"(?<=\d),(?=\d{3}\b)", "", text)
    found = _STANDALONE_INT.findall(flat)
    return int(found[-1]) if found else None


def verify_integer_answer(response_text: str, ground_truth: int) -> bool:
    try:
        value = extract_integer(response_text)
    except (ValueError, TypeError):
        return False
    return value is not None and value == int(ground_truth)


def integer_verifier(ground_truth: int) -> Verifier:
    return lambda text: verify_integer_answer(text, ground_truth)
