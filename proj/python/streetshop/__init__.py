"""Street photo to shop product search."""

from ._core import (
    Index,
    Pipeline,
    StreetshopError,
    ingest,
    precision_at_k,
    run_cli,
    synthesize,
)

__all__ = [
    "Index",
    "Pipeline",
    "StreetshopError",
    "ingest",
    "precision_at_k",
    "run_cli",
    "synthesize",
]
