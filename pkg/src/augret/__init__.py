"""Annotation-free dense-retrieval training at desk scale: pseudo
query-document pair production, contrastive bi-encoder training, and
retrieval evaluation."""

__version__ = "0.1.0"
