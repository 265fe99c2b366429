"""surfkit: segmentation losses, signed distance maps and surface metrics."""

__version__ = "0.1.0"
