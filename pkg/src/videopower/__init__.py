"""Quality-driven power control for multiuser wireless video.

A polyblock solver computes the power allocation that maximizes weighted-sum
PSNR, and a small feedforward network is trained to imitate it.
"""

__version__ = "0.1.0"
