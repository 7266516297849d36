"""Relative positional encodings for spiking Transformers.

Gray-code and logarithmic position signals for XNOR spiking self-attention,
a small surrogate-gradient trainer, synthetic tasks, and a fixed-point
log2 table for integer-only Log-PE.
"""

__version__ = "0.1.0"
