"""Deterministic synthetic-data generators shared across the test suite."""

from __future__ import annotations

import random

_WORDS = (
    "build", "create", "design", "page", "site", "widget", "timer", "game",
    "chart", "board", "form", "login", "signup", "landing", "portfolio",
    "gallery", "shop", "cart", "quiz", "editor", "player", "tracker",
    "dashboard", "calendar", "clock", "puzzle", "memory", "snake", "modal",
    "navbar", "footer", "table", "list", "todo", "notes", "drawing",
)


def random_query_text(rng: random.Random) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(3, 9)))


def mutate_text(text: str, rng: random.Random) -> str:
    """Small perturbation producing lexical and semantic near-duplicates."""
    choice = rng.randrange(4)
    if choice == 0 and len(text) > 4:
        i = rng.randrange(len(text) - 1)
        return text[:i] + text[i + 1] + text[i] + text[i + 2 :]
    if choice == 1:
        words = text.split()
        i = rng.randrange(len(words))
        words.insert(i, words[i])
        return " ".join(words)
    if choice == 2 and len(text) > 4:
        i = rng.randrange(len(text))
        return text[:i] + text[i + 1 :]
    return text + " " + rng.choice(_WORDS)


def synthetic_corpus(rng: random.Random, size: int) -> dict[str, str]:
    """Lowercase texts salted with exact copies and near-duplicates."""
    texts: dict[str, str] = {}
    pool: list[str] = []
    for index in range(size):
        roll = rng.random()
        if pool and roll < 0.15:
            text = rng.choice(pool)
        elif pool and roll < 0.45:
            text = mutate_text(rng.choice(pool), rng)
        else:
            text = random_query_text(rng)
        texts[f"q{index:04d}"] = text
        pool.append(text)
    return texts
