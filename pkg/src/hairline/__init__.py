"""Audit face-recognition accuracy across facial hairstyles.

Works from precomputed inputs: embeddings, facial-hair attribute scores,
68-point landmarks and segmentation masks.
"""

__version__ = "0.1.0"
