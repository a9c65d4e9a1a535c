"""Sentence-level sign language recognition toolkit.

Maps landmark (or rendered-frame) sequences to gloss sequences with two
trainable architectures topped by a CTC classification layer, and ships
the synthetic data generation, decoding, diagnosis, and WER evaluation
machinery needed to exercise the whole pipeline at desk scale.
"""

__version__ = "0.1.0"
