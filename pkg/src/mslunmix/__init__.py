"""Spectral unmixing of multispectral lidar photon-count waveforms."""

__version__ = "0.1.0"
