"""Selection-instance data model and JSONL dataset I/O.

One line per instance: {"persona": [...], "context": [...],
"candidates": [...], "labels": [0/1, ...]} with exactly one positive label.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

__all__ = ["DatasetFormatError", "MrsSample", "load_dataset", "save_dataset"]


class DatasetFormatError(ValueError):
    """A dataset line violates the JSONL schema."""


@dataclass
class MrsSample:
    """Persona, context, candidate set, and labels for one selection instance."""

    persona: list[str]
    context: list[str]
    candidates: list[str]
    labels: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.labels) != len(self.candidates):
            raise DatasetFormatError(
                f"{len(self.labels)} labels for {len(self.candidates)} candidates")
        if sum(self.labels) != 1:
            raise DatasetFormatError("exactly one candidate must be labeled positive")
        if any(l not in (0, 1) for l in self.labels):
            raise DatasetFormatError("labels must be 0 or 1")
        for utt in (*self.persona, *self.context, *self.candidates):
            if not isinstance(utt, str) or not utt.strip():
                raise DatasetFormatError("utterances must be non-empty strings")

    @property
    def positive_index(self) -> int:
        return self.labels.index(1)

    def texts(self):
        yield from self.persona
        yield from self.context
        yield from self.candidates

    def to_jsonable(self):
        return {"persona": self.persona, "context": self.context,
                "candidates": self.candidates, "labels": self.labels}


def load_dataset(path) -> list[MrsSample]:
    """Read and validate a JSONL dataset; errors carry the offending line number."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({err})") from None
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
            try:
                samples.append(MrsSample(
                    persona=list(obj.get("persona", [])),
                    context=list(obj.get("context", [])),
                    candidates=list(obj.get("candidates", [])),
                    labels=list(obj.get("labels", [])),
                ))
            except DatasetFormatError as err:
                raise DatasetFormatError(f"{path}:{lineno}: {err}") from None
    if not samples:
        logger.warning("dataset %s is empty", path)
    return samples


def save_dataset(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_jsonable(), sort_keys=True) + "\n")
