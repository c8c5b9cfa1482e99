from .compose import (DEFAULT_FRACTIONS, Component, MixConfigError, MixShortfallError, MixSpec,
                      allocate_counts, compose_mix)
from .manifest import (ManifestEntry, ManifestError, SamplingStrategy, apply_sampling, load_manifest,
                       parse_manifest, parse_sampling_strategy, sample_manifest_sources,
                       serialize_manifest)
from .render import (IMAGE_TOKEN, TASKS, InstructionSample, SkipRecord, aspect_mapping,
                     render_instruction)

__all__ = [
    "DEFAULT_FRACTIONS", "Component", "MixConfigError", "MixShortfallError", "MixSpec",
    "allocate_counts", "compose_mix",
    "ManifestEntry", "ManifestError", "SamplingStrategy", "apply_sampling", "load_manifest",
    "parse_manifest", "parse_sampling_strategy", "sample_manifest_sources", "serialize_manifest",
    "IMAGE_TOKEN", "TASKS", "InstructionSample", "SkipRecord", "aspect_mapping", "render_instruction",
]
