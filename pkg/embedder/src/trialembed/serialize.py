"""Context-field serialization.

The output string must match the forecasting package's own
serialization byte for byte (its encoder consumes the same documents
when embeddings are generated there synthetically), so the field order,
separator token, and collision handling below are contract, not style.
The parity is pinned by fixture tests against that package.
"""

CONTEXT_FIELDS = ("title", "objective", "mechanism_of_action", "indication",
                  "inclusion_criteria", "exclusion_criteria")

SEPARATOR = " [SEP] "


def serialize_context(record: dict) -> str:
    """Fixed-order 'field: value' text joined by the separator token.

    Values containing the literal separator are de-fanged so the overall
    serialization stays parseable.
    """
    parts = []
    for name in CONTEXT_FIELDS:
        value = record.get(name) or ""
        if SEPARATOR in value:
            value = value.replace(SEPARATOR, " / ")
        parts.append(f"{name}: {value}")
    return SEPARATOR.join(parts)
