"""Willmore-type surfaces concentrating at a point of a Riemannian 3-manifold."""

__version__ = "0.1.0"
