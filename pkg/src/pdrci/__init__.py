"""Parameter-dependent robust control invariant sets for polytopic LPV systems."""
from .model import ProblemSpec, load_problem
from .synthesis import SynthesisError, SynthesisOptions, SynthesisResult, synthesize

__all__ = ["ProblemSpec", "load_problem", "SynthesisError", "SynthesisOptions",
           "SynthesisResult", "synthesize"]
__version__ = "0.1.0"
