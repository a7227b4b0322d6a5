"""Text-to-text regression of EDA cloud job resources with a small decoder-only transformer."""

__version__ = "0.1.0"
