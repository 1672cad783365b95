from conla.data.dataset import (
    ActionClassLabel,
    Episode,
    dataset_hash,
    load_dataset,
    load_labels,
    write_dataset,
)
from conla.data.instructions import (
    consolidate_labels,
    extract_action_label,
    label_name,
    load_lexicon,
    normalize_instruction,
)
from conla.data.pairs import FramePair, reverse_pair, sample_frame_pair
from conla.data.synthetic import (
    ProbeContext,
    ProbeSet,
    build_probe_set,
    generate_dataset,
    generate_synthetic_episode,
)

__all__ = [
    "ActionClassLabel",
    "Episode",
    "FramePair",
    "ProbeContext",
    "ProbeSet",
    "build_probe_set",
    "consolidate_labels",
    "dataset_hash",
    "extract_action_label",
    "generate_dataset",
    "generate_synthetic_episode",
    "label_name",
    "load_dataset",
    "load_labels",
    "load_lexicon",
    "normalize_instruction",
    "reverse_pair",
    "sample_frame_pair",
    "write_dataset",
]
