"""
Tests package for PointSeg.
"""
