"""displab: embedding-geometry laboratory.

Condensation metrics, dispersion-style regularizers with exact
gradients, a tiny trainable transformer, and Monte-Carlo checks of the
dimension-padding propositions.
"""

__version__ = "0.1.0"
