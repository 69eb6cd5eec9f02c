"""Word-level vocabulary and prompt templates."""
import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from dpc.errors import ContractViolation

logger = logging.getLogger(__name__)

UNK = "<unk>"
PAD = "<pad>"
PLACEHOLDER = "[label word]"

_PUNCTUATION = str.maketrans({c: " " for c in string.punctuation})


def words(text: str) -> List[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCTUATION).split()


class Vocabulary:
    """Dense token ids; ids 0 and 1 are ``<unk>`` and ``<pad>``."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [UNK, PAD]:
            raise ContractViolation(f"vocabulary must start with {UNK}, {PAD}; got {tokens[:2]}")
        duplicates = sorted({t for t in tokens if tokens.count(t) > 1})
        if duplicates:
            raise ContractViolation(f"duplicate vocabulary tokens: {', '.join(duplicates)}")
        self.tokens = tokens
        self._ids: Dict[str, int] = {token: i for i, token in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def pad_id(self) -> int:
        return 1

    def lookup(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        """Vocabulary of every word in ``texts``, first-appearance order."""
        tokens = [UNK, PAD]
        seen = set(tokens)
        for text in texts:
            for word in words(text.replace(PLACEHOLDER, " ")):
                if word not in seen:
                    seen.add(word)
                    tokens.append(word)
        return cls(tokens)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        logger.debug("loaded %d vocabulary tokens from %s", len(lines), path)
        return cls([line.strip() for line in lines])

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.tokens) + "\n", encoding="utf-8")
        return path


def tokenize(text: str, vocabulary: Vocabulary) -> List[int]:
    return [vocabulary.lookup(word) for word in words(text)]


@dataclass(frozen=True)
class Template:
    text: str
    token_ids: tuple

    @classmethod
    def parse(cls, text: str, vocabulary: Vocabulary) -> "Template":
        count = text.count(PLACEHOLDER)
        if count != 1:
            raise ContractViolation(f"template {text!r} must contain {PLACEHOLDER!r} exactly once, found {count}")
        if not text.rstrip().endswith(PLACEHOLDER):
            raise ContractViolation(f"template {text!r} must end with {PLACEHOLDER!r}")
        ids = tokenize(text.replace(PLACEHOLDER, " "), vocabulary)
        if not ids:
            raise ContractViolation(f"template {text!r} has no words before {PLACEHOLDER!r}")
        return cls(text, tuple(ids))

    def __len__(self) -> int:
        return len(self.token_ids)

    def fill(self, label: str) -> str:
        return self.text.replace(PLACEHOLDER, label)


TEMPLATE_PRESETS = (
    "a photo seems to express a feeling of [label word]",
    "an image to express a feeling like [label word]",
    "a picture seems to express some feelings like [label word]",
)
