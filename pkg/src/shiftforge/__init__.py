"""shiftforge: build structured distribution-shift benchmarks from
metadata-tagged image datasets.

The pipeline: ingest annotations into a canonical corpus, enumerate
per-class context subsets, connect them in overlap-weighted meta-graphs,
embed the nodes spectrally to quantify shift distances, merge similar
subsets with Louvain communities, and materialize reproducible
domain-generalization / subpopulation-shift / training-conflict split
manifests.
"""

__version__ = "0.1.0"

from .errors import ParseError, PipelineError, ShiftForgeError, ValidationError
from .records import Corpus, ImageRecord, ObjectAnnotation

__all__ = [
    "Corpus",
    "ImageRecord",
    "ObjectAnnotation",
    "ParseError",
    "PipelineError",
    "ShiftForgeError",
    "ValidationError",
    "__version__",
]
