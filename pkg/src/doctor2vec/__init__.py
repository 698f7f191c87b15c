"""Doctor2Vec: trial-conditioned doctor embeddings from patient memory banks."""
__version__ = "0.1.0"
