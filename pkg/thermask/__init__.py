"""
Thermask - Entropy-masked autoencoder pretraining for infrared imagery.
"""

__version__ = "1.0.0"
