"""
Utils package initialization
Configuration, validation and result output helpers
"""

__version__ = "1.0.0"
