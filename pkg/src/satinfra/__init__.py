"""Satellite infrastructure pipeline: masks, segmentation, counting, features, benchmark."""
__version__ = "0.1.0"
