"""Desk-scale GRPO lab with leave-one-out EMA-FID rewards and adaptive entropy control."""

__version__ = "0.1.0"
