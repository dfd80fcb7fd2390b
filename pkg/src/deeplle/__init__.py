"""Per-sequence video frame interpolation with a latent linearity constraint."""

__version__ = "0.1.0"
