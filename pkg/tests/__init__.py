"""
Tests for the discontinuous least-squares finite element experiments
"""
