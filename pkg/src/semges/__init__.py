"""Two-stage co-speech gesture generation on a small numpy autodiff engine.

Stage 1 trains vector-quantized motion priors for hands and body. Stage 2
trains a cross-modal generator against the frozen priors. ``longseq`` stitches
clips into long sequences and ``metrics`` scores the results.
"""

__version__ = "0.1.0"
