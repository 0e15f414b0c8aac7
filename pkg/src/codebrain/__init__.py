"""codebrain: two-stage self-supervised modeling of multichannel EEG.

Stage 1 tokenizes one-second signal patches into paired discrete codes, one
drawn from a time-domain codebook and one from a frequency-domain codebook.
Stage 2 trains a stack of gated global-convolution + sliding-window-attention
blocks to predict masked codes, and a small frozen-feature probe evaluates
the learned representation on downstream labels.
"""

__version__ = "0.1.0"
