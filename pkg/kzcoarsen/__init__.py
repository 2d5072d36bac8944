"""
kzcoarsen: Kibble-Zurek freeze-out and post-freeze-out coarsening toolkit.
Scaling functions, three simulation engines and the estimators that connect them.
"""

__version__ = '0.1.0'
