"""Gloss vocabulary: dense ids in [0, V), blank fixed at id V."""

from pathlib import Path

from .errors import UnknownGlossError, SchemaError


class GlossVocabulary:
    def __init__(self, glosses):
        self.glosses = list(glosses)
        self._ids = {g: i for i, g in enumerate(self.glosses)}
        if len(self._ids) != len(self.glosses):
            raise SchemaError("duplicate gloss strings in vocabulary")

    def __len__(self):
        return len(self.glosses)

    def __eq__(self, other):
        return isinstance(other, GlossVocabulary) and self.glosses == other.glosses

    @property
    def blank_id(self):
        return len(self.glosses)

    @property
    def num_classes(self):
        """Gloss count plus the blank class."""
        return len(self.glosses) + 1

    def id_of(self, gloss):
        try:
            return self._ids[gloss]
        except KeyError:
            raise UnknownGlossError(gloss) from None

    def encode(self, glosses):
        """Gloss strings -> id tuple, order preserved."""
        return tuple(self.id_of(g) for g in glosses)

    def decode(self, ids):
        """Id sequence -> gloss strings; blank has no string and is rejected."""
        out = []
        for i in ids:
            if not 0 <= i < len(self.glosses):
                raise UnknownGlossError(int(i))
            out.append(self.glosses[i])
        return out

    @classmethod
    def from_file(cls, path):
        text = Path(path).read_text(encoding="utf-8")
        lines = [line.strip() for line in text.splitlines()]
        return cls([line for line in lines if line])

    def to_file(self, path):
        Path(path).write_text("".join(g + "\n" for g in self.glosses), encoding="utf-8")
