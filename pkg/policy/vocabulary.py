"""
Fixed token table of the toy policy

Tokens render space-separated; boxed answers are atomic tokens so a single
sampling step commits to an answer.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

from taskforge.transforms import boxed, response_words
from verifier.answers import ABSTAIN

EOS = '<eos>'


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != EOS:
            raise ValueError("Vocabulary must start with the EOS token")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("Vocabulary tokens must be unique")

    @classmethod
    def for_modulus(cls, modulus: int) -> 'Vocabulary':
        return _vocabulary_for(max(int(modulus), 10))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        return 0

    @property
    def index(self) -> dict:
        return _index_of(self.tokens)

    def token_id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise ValueError(f"Token {token!r} is not in the vocabulary") from None

    def tokenize(self, text: str, add_eos: bool = True) -> List[int]:
        ids = [self.token_id(word) for word in text.split()]
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def detokenize(self, token_ids: Sequence[int]) -> str:
        words = []
        for token_id in token_ids:
            if token_id == self.eos_id:
                continue
            words.append(self.tokens[int(token_id)])
        return ' '.join(words)


@lru_cache(maxsize=None)
def _index_of(tokens: Tuple[str, ...]) -> dict:
    return {token: position for position, token in enumerate(tokens)}


@lru_cache(maxsize=None)
def _vocabulary_for(answer_range: int) -> Vocabulary:
    answers = [boxed(str(value)) for value in range(answer_range)]
    answers += [boxed('true'), boxed('false'), boxed(ABSTAIN)]
    return Vocabulary(tokens=(EOS,) + response_words() + tuple(answers))
