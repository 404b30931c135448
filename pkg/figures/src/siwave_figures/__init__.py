"""Publication figures rendered from siwave artifact directories."""

from .render import ArtifactError, FigureJob, render

__all__ = ["ArtifactError", "FigureJob", "render"]
__version__ = "0.1.0"
