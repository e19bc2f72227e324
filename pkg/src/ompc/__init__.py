"""Occupancy-masked point-cloud codec.

A miniature video-based point-cloud compressor: patch projection to 2-D
frames, a block video codec whose rate-distortion optimization ignores the
distortion of unoccupied pixels (they cost rate only), occupancy-restricted
sample adaptive offset, and an evaluation harness measuring the resulting
bitrate savings at equal occupied-pixel and point-cloud quality.
"""

__version__ = "0.1.0"
