"""Bit-accurate software model of a rate-coded LIF spiking-network accelerator."""

__version__ = "0.1.0"
