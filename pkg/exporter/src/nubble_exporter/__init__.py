"""Patch-feature grid exporter for the nubblematch toolkit."""

__version__ = "0.1.0"

from .export import export_batch, export_features, export_mask, patch_grid_dims

__all__ = ["__version__", "export_batch", "export_features", "export_mask",
           "patch_grid_dims"]
