"""Cosmetic knowledge graph learning for halal status prediction."""
__version__ = "0.1.0"
