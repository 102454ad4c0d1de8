"""Dynamic-programming soft shadows over maximum mipmaps on cube-sphere terrain."""

__version__ = "0.1.0"
