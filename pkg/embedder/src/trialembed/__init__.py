"""Trial-text embedding exporter.

Reads a trials JSONL file, serializes each trial's free-text context
fields into one document, encodes the documents with a pretrained
long-context encoder (or a deterministic offline hashing encoder), and
writes the rows as an EMB1 binary matrix that the forecasting package
loads directly.
"""

from trialembed.serialize import CONTEXT_FIELDS, SEPARATOR, serialize_context
from trialembed.backends import HashingEncoder, TransformerEncoder, load_encoder
from trialembed.emb1 import write_embeddings

__all__ = [
    "CONTEXT_FIELDS",
    "SEPARATOR",
    "serialize_context",
    "HashingEncoder",
    "TransformerEncoder",
    "load_encoder",
    "write_embeddings",
]
