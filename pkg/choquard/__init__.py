"""
Spectral variational solver for the doubly-nonlocal fractional Choquard equation.
"""
__version__ = '1.0.0'
