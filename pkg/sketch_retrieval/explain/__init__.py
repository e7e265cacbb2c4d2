"""Explainability procedures over a trained matcher."""

from .attention_map import AttentionMap, self_attention_map, write_attention_map
from .correspondence import CorrespondenceSet, correspondences, pair_kernel, write_correspondences
from .influence import InfluenceResult, leave_one_out, most_influential_pair
from .synthesis import (
    PatchSource,
    SynthesisResult,
    patch_replace_synthesis,
    read_provenance,
    replay_provenance,
    write_provenance,
)

__all__ = [
    "AttentionMap",
    "CorrespondenceSet",
    "InfluenceResult",
    "PatchSource",
    "SynthesisResult",
    "correspondences",
    "leave_one_out",
    "most_influential_pair",
    "pair_kernel",
    "patch_replace_synthesis",
    "read_provenance",
    "replay_provenance",
    "self_attention_map",
    "write_attention_map",
    "write_correspondences",
    "write_provenance",
]
