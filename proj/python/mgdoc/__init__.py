"""Multi-modal, multi-granular document transformer."""

from ._mgdoc import (
    Document,
    MgdocError,
    Model,
    config_hash,
    entity_f1,
    load_corpus,
    resolve_config,
    save_corpus,
    synthetic_corpus,
)

__all__ = [
    "Document",
    "MgdocError",
    "Model",
    "config_hash",
    "entity_f1",
    "load_corpus",
    "resolve_config",
    "save_corpus",
    "synthetic_corpus",
]
