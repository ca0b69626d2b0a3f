"""Multi-view hierarchical VAE over octuple-tokenized multi-track MIDI."""

__version__ = "0.1.0"
