"""Instruction normalization and (verb, direction) label extraction.

The labeling pipeline is a deterministic lexicon lookup: the first token that
appears in the verb table is the main verb, and directional phrases are
matched against a dictionary of standardized directions, longest phrase
first. Instructions without a known verb fall into the "uncertain" class, as
do classes that end up below the consolidation threshold.

The lexicon is a JSON file so real corpora can extend it without code edits.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from pathlib import Path

UNCERTAIN = "uncertain"
EMPTY_MARKER = ""

DEFAULT_CONJUNCTIONS = frozenset({"and"})

DEFAULT_VERBS = frozenset(
    {
        "move", "slide", "push", "pull", "put", "place", "pick", "lift",
        "stack", "drop", "shift", "take", "turn", "open", "close", "cover",
        "knock", "pour",
    }
)

# phrase -> standardized direction; multi-word phrases are matched first.
DEFAULT_DIRECTIONS = {
    "to the upper right": "up_right",
    "to the upper left": "up_left",
    "to the lower right": "down_right",
    "to the lower left": "down_left",
    "up toward the right": "up_right",
    "up toward the left": "up_left",
    "down toward the right": "down_right",
    "down toward the left": "down_left",
    "upper right": "up_right",
    "upper left": "up_left",
    "lower right": "down_right",
    "lower left": "down_left",
    "to the right": "right",
    "to the left": "left",
    "to the top": "up",
    "to the bottom": "down",
    "in front of": "front",
    "rightwards": "right",
    "leftwards": "left",
    "upwards": "up",
    "downwards": "down",
    "right": "right",
    "left": "left",
    "up": "up",
    "down": "down",
    "top": "up",
    "bottom": "down",
    "onto": "on",
    "on": "on",
    "into": "in",
    "in": "in",
    "behind": "behind",
    "over": "over",
    "under": "under",
}

_NON_ALNUM = re.compile(r"[^a-z0-9 ]+")
_SPACES = re.compile(r" +")


def load_lexicon(path) -> tuple[frozenset[str], dict[str, str]]:
    """Load {"verbs": [...], "directions": {phrase: name}} from JSON."""
    data = json.loads(Path(path).read_text())
    return frozenset(data["verbs"]), dict(data["directions"])


def normalize_instruction(text: str, conjunctions=DEFAULT_CONJUNCTIONS) -> str:
    """Lowercase, strip non-alphanumerics (keeping spaces), collapse runs.

    Sentences containing a filtered conjunction describe compound actions and
    come back as the empty marker instead of raising.
    """
    lowered = text.lower()
    cleaned = _NON_ALNUM.sub(" ", lowered)
    cleaned = _SPACES.sub(" ", cleaned).strip()
    tokens = cleaned.split(" ") if cleaned else []
    if any(tok in conjunctions for tok in tokens):
        return EMPTY_MARKER
    return cleaned


def extract_action_label(
    instruction: str,
    verbs: frozenset[str] = DEFAULT_VERBS,
    directions: dict[str, str] = DEFAULT_DIRECTIONS,
) -> tuple[str, str] | None:
    """Map a normalized instruction to (verb, direction); None means uncertain.

    The verb is the first token found in the verb table. Directions match as
    whole-word phrases, longest key first, so "to the upper right" wins over
    "right". No direction phrase yields direction "none".
    """
    if not instruction:
        return None
    tokens = instruction.split(" ")
    verb = next((tok for tok in tokens if tok in verbs), None)
    if verb is None:
        return None
    padded = f" {instruction} "
    direction = "none"
    for phrase in sorted(directions, key=lambda p: (-len(p), p)):
        if f" {phrase} " in padded:
            direction = directions[phrase]
            break
    return verb, direction


def label_name(label: tuple[str, str] | None) -> str:
    if label is None:
        return UNCERTAIN
    verb, direction = label
    return f"{verb}_{direction}"


def consolidate_labels(raw_labels, min_count: int) -> dict[str, int]:
    """Merge rare classes into "uncertain" and assign dense sorted ids.

    raw_labels is an iterable of class names (label_name output). Classes
    seen fewer than min_count times collapse into "uncertain"; the final map
    always contains "uncertain" and is lexicographically ordered, so it is
    invariant to the input order.
    """
    counts = Counter(raw_labels)
    survivors = {name for name, c in counts.items() if c >= min_count and name != UNCERTAIN}
    names = sorted(survivors | {UNCERTAIN})
    return {name: i for i, name in enumerate(names)}


def consolidate(name: str, labels: dict[str, int]) -> str:
    """Map a raw class name onto the consolidated map (falls back to uncertain)."""
    return name if name in labels else UNCERTAIN


def label_episodes(
    episodes,
    min_count: int = 1,
    verbs: frozenset[str] = DEFAULT_VERBS,
    directions: dict[str, str] = DEFAULT_DIRECTIONS,
) -> dict[str, int]:
    """Run the normalize -> extract -> consolidate pipeline over a corpus.

    Sets episode.action_class in place and returns the consolidated map.
    """
    raw = []
    for ep in episodes:
        norm = normalize_instruction(ep.instruction)
        raw.append(label_name(extract_action_label(norm, verbs, directions)))
    labels = consolidate_labels(raw, min_count)
    for ep, name in zip(episodes, raw):
        ep.action_class = consolidate(name, labels)
    return labels
