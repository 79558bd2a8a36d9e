"""
Discontinuous least-squares finite elements for the Poisson model problem
"""

__version__ = "0.1.0"
