"""
Run service blueprint package.
"""
