"""Detect diagnoses documented in a record but missing from its discharge
list, and estimate the DRG cost impact of recovering them."""

from .core import (
    CcLevel,
    DrgAssignment,
    IcdEntry,
    IcdIndex,
    Lexicon,
    LexiconKind,
    MedicalRecord,
    Tier,
    load_corpus,
    load_icd_table,
    load_lexicon,
    make_lexicon,
    normalize_disease_name,
    save_corpus,
)
from .features import ContextSample, FeatureLexicons, OrderTrackScope, assemble_features
from .pipeline import (
    DetectConfig,
    Models,
    PipelineLexicons,
    WriteMissingFinding,
    batch_detect,
    detect_write_missing,
)
from .recall import DiseaseMention, build_context_window, build_matcher, find_mentions

__version__ = "0.1.0"

__all__ = [
    "CcLevel", "ContextSample", "DetectConfig", "DiseaseMention",
    "DrgAssignment", "FeatureLexicons", "IcdEntry", "IcdIndex", "Lexicon",
    "LexiconKind", "MedicalRecord", "Models", "OrderTrackScope",
    "PipelineLexicons", "Tier", "WriteMissingFinding", "assemble_features",
    "batch_detect", "build_context_window", "build_matcher",
    "detect_write_missing", "find_mentions", "load_corpus", "load_icd_table",
    "load_lexicon", "make_lexicon", "normalize_disease_name", "save_corpus",
]
