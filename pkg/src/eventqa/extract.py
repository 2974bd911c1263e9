"""Binary answer extraction from raw model output.

Two-stage rule. First look for the canonical closing sentence, matching
``[Tt]herefore,`` followed by anything (newlines included) and then
``answer is: yes`` or ``answer is: no``; when a trace restates intermediate
conclusions, the last such sentence wins. Only if no canonical sentence is
present, fall back to the first standalone yes/no token, where standalone
means bounded by word boundaries, so "yesterday" and "nothing" never match.
If neither rule fires the output is unparseable, which is a value, not an
error; scoring counts it as incorrect.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .corpus import Answer


class ExtractedLabel(str, Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"

    def as_answer(self) -> Answer | None:
        if self is ExtractedLabel.UNPARSEABLE:
            return None
        return Answer(self.value)


class ExtractionMethod(str, Enum):
    CANONICAL_REGEX = "canonical_regex"
    FALLBACK_FIRST_TOKEN = "fallback_first_token"
    NONE = "none"


@dataclass(frozen=True)
class ExtractedAnswer:
    answer: ExtractedLabel
    method: ExtractionMethod
    matched_span: tuple[int, int] | None = None  # byte offsets into the raw text

    def to_dict(self) -> dict:
        return {
            "answer": self.answer.value,
            "method": self.method.value,
            "matched_span": list(self.matched_span) if self.matched_span else None,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExtractedAnswer":
        span = raw.get("matched_span")
        return cls(
            answer=ExtractedLabel(raw["answer"]),
            method=ExtractionMethod(raw["method"]),
            matched_span=(int(span[0]), int(span[1])) if span else None,
        )


# The token group is case-insensitive; the "Therefore," lead-in is not.
_CANONICAL_RE = re.compile(r"[Tt]herefore,.*?answer is: ((?i:yes|no))", re.DOTALL)
_STANDALONE_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)

UNPARSEABLE = ExtractedAnswer(answer=ExtractedLabel.UNPARSEABLE, method=ExtractionMethod.NONE)


def _byte_span(text: str, start: int, end: int) -> tuple[int, int]:
    return len(text[:start].encode("utf-8")), len(text[:end].encode("utf-8"))


def extract_answer(raw_text: str) -> ExtractedAnswer:
    """Extract a yes/no answer from model output text."""
    if not raw_text:
        return UNPARSEABLE

    canonical = None
    for canonical in _CANONICAL_RE.finditer(raw_text):
        pass
    if canonical is not None:
        return ExtractedAnswer(
            answer=ExtractedLabel(canonical.group(1).lower()),
            method=ExtractionMethod.CANONICAL_REGEX,
            matched_span=_byte_span(raw_text, canonical.start(), canonical.end()),
        )

    fallback = _STANDALONE_RE.search(raw_text)
    if fallback is not None:
        return ExtractedAnswer(
            answer=ExtractedLabel(fallback.group(1).lower()),
            method=ExtractionMethod.FALLBACK_FIRST_TOKEN,
            matched_span=_byte_span(raw_text, fallback.start(), fallback.end()),
        )

    return UNPARSEABLE
