"""Wildfire localization on 12-band airborne imagery.

Radiometric preprocessing, patch datasets, numpy-only classification and
segmentation networks, a color-rule baseline, pixel metrics, and a two-tier
streaming inference simulator.
"""

__version__ = "0.1.0"
