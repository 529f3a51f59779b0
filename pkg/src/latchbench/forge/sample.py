"""Seeded booking dialogues in the corpus format, for offline runs and tests."""

from __future__ import annotations

import random

from ..tokens import derive_seed
from .corpus import DialogueSource, Turn

_AREAS = ("north", "south", "east", "west", "centre")
_PRICES = ("cheap", "moderate", "expensive")
_FOODS = ("italian", "chinese", "indian", "british", "french", "thai")
_DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


def _hotel(rng: random.Random) -> list[Turn]:
    price, area, day, people = rng.choice(_PRICES), rng.choice(_AREAS), rng.choice(_DAYS), rng.randint(2, 6)
    return [
        Turn("user", f"Hi, I am looking for a {price} place to stay in the {area} of town."),
        Turn("system", f"There are several {price} options in the {area}. Do you need parking?"),
        Turn("user", "Free parking would be nice, and wifi please."),
        Turn("system", "I have a couple that fit. How many nights and from which day?"),
        Turn("user", f"Please book it for {people} people for 2 nights starting {day}."),
        Turn("system", "Let me check availability for those dates."),
    ]


def _restaurant(rng: random.Random) -> list[Turn]:
    food, area, day, people = rng.choice(_FOODS), rng.choice(_AREAS), rng.choice(_DAYS), rng.randint(2, 8)
    hour = rng.randint(11, 20)
    return [
        Turn("user", f"Can you help me find a restaurant serving {food} food in the {area}?"),
        Turn("system", f"Sure, I found a few {food} restaurants in the {area}. Any price range?"),
        Turn("user", f"Something {rng.choice(_PRICES)} please."),
        Turn("system", "Got it. Would you like me to make a reservation?"),
        Turn("user", f"Yes, a table for {people} people on {day} at {hour}:{rng.choice(('00', '15', '30', '45'))}."),
        Turn("system", "One moment while I look for a table."),
    ]


def _train(rng: random.Random) -> list[Turn]:
    day = rng.choice(_DAYS)
    hour = rng.randint(6, 21)
    return [
        Turn("user", f"I need a train to Cambridge on {day}."),
        Turn("system", "Where will you be departing from?"),
        Turn("user", f"From London, leaving after {hour:02d}:{rng.choice(('00', '30'))}."),
        Turn("system", "There are several trains that match. How many tickets?"),
        Turn("user", f"Tickets for {rng.randint(2, 5)} people please."),
        Turn("system", "Let me find the best connection."),
    ]


_DOMAINS = {"hotel": _hotel, "restaurant": _restaurant, "train": _train}


def sample_dialogues(n: int, seed: int = 0) -> list[DialogueSource]:
    """``n`` short booking dialogues; dialogue ``i`` depends only on ``(seed, i)``."""
    out = []
    for i in range(n):
        rng = random.Random(derive_seed(seed, "sample-dialogue", i))
        domain = sorted(_DOMAINS)[rng.randrange(len(_DOMAINS))]
        out.append(DialogueSource(f"SMP{i:05d}", tuple(_DOMAINS[domain](rng)), (domain,)))
    return out
