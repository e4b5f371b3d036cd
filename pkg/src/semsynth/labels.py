"""Class labels and the on-disk class vocabulary format.

Vocabulary file: one class per line, "id name context". Id 0 is reserved
for a background class; (name, context) pairs are unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, PreconditionError

BACKGROUND_NAME = "background"


@dataclass(frozen=True)
class ClassLabel:
    id: int
    name: str
    context: str
    is_background: bool = False

    def __post_init__(self):
        if self.id < 0:
            raise PreconditionError(f"class id must be non-negative, got {self.id}")
        if self.id == 0 and not self.is_background:
            raise PreconditionError("class id 0 is reserved for background")


@dataclass
class ClassVocabulary:
    """Ordered class set with unique ids and unique (name, context) pairs."""

    classes: list[ClassLabel] = field(default_factory=list)

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        keys = [(c.name, c.context) for c in self.classes]
        if len(set(ids)) != len(ids):
            raise PreconditionError("duplicate class ids in vocabulary")
        if len(set(keys)) != len(keys):
            raise PreconditionError("duplicate (name, context) pairs in vocabulary")

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def by_id(self, class_id: int) -> ClassLabel:
        for c in self.classes:
            if c.id == class_id:
                return c
        raise KeyError(f"unknown class id {class_id}")

    def by_name(self, name: str, context: str) -> ClassLabel:
        for c in self.classes:
            if c.name == name and c.context == context:
                return c
        raise KeyError(f"unknown class ({name!r}, {context!r})")

    def backgrounds(self) -> list[ClassLabel]:
        return [c for c in self.classes if c.is_background]

    def background_for(self, context: str) -> ClassLabel:
        for c in self.classes:
            if c.is_background and c.context == context:
                return c
        raise KeyError(f"no background class for context {context!r}")

    def contexts(self) -> list[str]:
        seen: list[str] = []
        for c in self.classes:
            if c.context not in seen:
                seen.append(c.context)
        return seen

    def save(self, path: str | Path) -> None:
        lines = [f"{c.id} {c.name} {c.context}" for c in self.classes]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ClassVocabulary":
        classes = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 'id name context'")
            try:
                cid = int(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad class id {parts[0]!r}") from None
            classes.append(
                ClassLabel(cid, parts[1], parts[2], is_background=parts[1] == BACKGROUND_NAME)
            )
        return cls(classes)
