"""Cross-modal sheet-music / audio embedding engine.

Learns a joint 32-dimensional embedding space for sheet-music image
snippets and audio spectrogram excerpts, and uses it for snippet
retrieval, piece identification by voting, and DTW-based alignment.
"""

__version__ = "0.1.0"
