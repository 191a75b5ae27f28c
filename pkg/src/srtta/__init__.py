"""Test-time adaptation for single-image super-resolution.

Core pieces: a small residual SR network (`model`), a from-scratch imaging
stack (`imaging`, `jpeg`, `degrade`), a degradation classifier
(`classifier`), Fisher-based parameter preservation (`preserve`), the
adaptation loop and stream drivers (`adapt`), benchmark generation
(`benchgen`), and the experiment/reporting layer (`experiment`, `report`,
`cli`).
"""

__version__ = "0.1.0"
