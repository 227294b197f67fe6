"""Tokenization shared by every scorer and by restriction matching."""

import re
from functools import lru_cache

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit.

    No stemming and no stopword removal, so results are reproducible
    across implementations.
    """
    return _TOKEN.findall(text.lower())


@lru_cache(maxsize=65536)
def token_set(text: str) -> frozenset[str]:
    return frozenset(tokenize(text))


def satisfies_restriction(document: str, restriction: str | None) -> bool:
    """True when ``document`` contains every token of ``restriction``."""
    if not restriction:
        return True
    return token_set(restriction) <= token_set(document)


def expand_query(query: str, restriction: str | None) -> str:
    """Concatenate a query with a step restriction using one space."""
    if restriction:
        return f"{query} {restriction}"
    return query
