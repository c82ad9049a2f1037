"""Pricing-based user association, power control and beamforming for downlink HetNets."""

__version__ = "0.1.0"
