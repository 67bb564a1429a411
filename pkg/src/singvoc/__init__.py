"""Singing-voice analysis/resynthesis toolkit.

Four vocoder families (pulse, DSM, HNM, glottal) over a shared DSP core,
plus artifact diagnostics for high-pitched voices and a paired-comparison
listening-test pipeline (scheduler, collection service, aggregator).
"""

__version__ = "0.1.0"

from .dsp import F0Track, Frame, GciSequence, LpFilter, LsfVector, SampleBuffer

__all__ = [
    "SampleBuffer",
    "Frame",
    "F0Track",
    "LpFilter",
    "LsfVector",
    "GciSequence",
    "__version__",
]
