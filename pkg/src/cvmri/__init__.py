"""cvmri: complex-valued deep learning toolkit for compressive-sensing MRI."""

__version__ = "0.1.0"
