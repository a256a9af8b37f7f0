"""Sequence tagging with a frozen BiLSTM-CRF teacher and a student that predicts vectors for rare words."""

__version__ = "0.1.0"
