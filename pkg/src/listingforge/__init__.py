"""Data curation, image consolidation, instruction mixing and evaluation for e-commerce VLMs."""

__version__ = "0.1.0"
