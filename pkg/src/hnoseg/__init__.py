"""Hartley and Fourier neural operators for volumetric segmentation."""
