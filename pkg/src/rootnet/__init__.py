"""Desk-scale root segmentation engine: from-scratch U-Net training with
transfer-learning regimes, streaming ROC/PR evaluation, SLIC superpixel
labeling, and a synthetic minirhizotron-style data generator."""

__version__ = "0.1.0"
