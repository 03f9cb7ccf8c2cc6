"""Singing-voice deepfake detection: stem augmentation, a graph-attention
back-end on a small reverse-mode autograd, and EER evaluation."""

__version__ = "0.1.0"
