"""
Core package initialization
Binscatter estimation, bin selection and inference
"""

__version__ = "1.0.0"
__author__ = "binsmooth developers"
