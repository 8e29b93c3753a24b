"""
Spectral gradient dynamics on low-rank matrix factorization
"""

__version__ = "0.3.0"
