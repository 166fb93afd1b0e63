"""Random-matrix analysis of gradient-flow training for two-class Gaussian mixtures."""

from .mp import ModelParams, SpectrumSpec, mp_edges, spike_location, stieltjes_m
from .theory import error_curve, functionals, optimal_bound, optimal_stopping
from .contour import contour_functionals, default_contour
from .sim import sample_dataset, sample_init, SimRun, weight_at, empirical_errors, empirical_spectrum

__version__ = "0.1.0"
