"""Few-shot intent detection with prototype-informed attention over utterance embeddings."""

__version__ = "0.1.0"
