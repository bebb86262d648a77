"""
H2SGNN - spectral graph neural network for heterogeneous, heterophilic graphs
"""

__version__ = "1.0.0"
