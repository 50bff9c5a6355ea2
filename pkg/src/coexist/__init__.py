"""Joint MIMO codebook and surveillance-radar design for spectrum sharing."""

__version__ = "0.1.0"
