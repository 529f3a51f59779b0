"""Trajectory forge: corpus ingestion, update generation, noise and payload geometry."""

from .builders import (
    FactChain,
    SeedSpec,
    Trajectory,
    TrajectorySkipped,
    build_equidistant,
    build_hijack,
    build_high_entropy,
    build_shallow,
    build_trajectory,
    make_fact_chain,
)
from .corpus import DialogueSource, Turn, load_dialogues
from .geometry import Block, GeometryError, place_at_fraction
from .noise import NoiseBlock, make_noise
from .updates import IntentPair, generate_update

__all__ = [
    "Block", "DialogueSource", "FactChain", "GeometryError", "IntentPair", "NoiseBlock", "SeedSpec",
    "Trajectory", "TrajectorySkipped", "Turn", "build_equidistant", "build_hijack", "build_high_entropy",
    "build_shallow", "build_trajectory", "generate_update", "load_dialogues", "make_fact_chain",
    "make_noise", "place_at_fraction",
]
