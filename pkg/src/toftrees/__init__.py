"""Tree detection in medium-resolution multi-temporal satellite imagery."""

from .raster import (
    ChannelLayout,
    LabelGrid,
    PlotSample,
    PredictionGrid,
    QualityMask,
    TimeSeriesStack,
    build_stack,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelLayout",
    "LabelGrid",
    "PlotSample",
    "PredictionGrid",
    "QualityMask",
    "TimeSeriesStack",
    "build_stack",
]
