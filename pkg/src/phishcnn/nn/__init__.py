"""Layers, losses, the Adam optimizer and gradient checking on numpy arrays."""
