"""Utterance-level emotion classification for multi-party dialogues.

The package is self-contained: corpus loading, text cleanup, a small
reverse-mode autodiff engine, the BiLSTM / self-attention model, Adam
training and evaluation all live here, with numpy as the only numeric
dependency.
"""

__version__ = "0.1.0"
