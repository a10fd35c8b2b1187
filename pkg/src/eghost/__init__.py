"""Electron-photon coincidence (ghost) imaging toolkit.

Simulation of correlated electron and photon event streams, coincidence
matching and g2 histograms, parabolic-mirror raytracing, ghost image
reconstruction and grating-based resolution fitting.
"""
from .coincidence import (CoincidenceWindow, CorrelationFunction, PairList, TimeDifferenceHistogram,
                          accidental_rate, estimate_offset, expected_accidentals, g2, match_coincidences,
                          time_difference_histogram)
from .config import RunConfig, build_config
from .errors import *  # noqa: F401,F403
from .events import (ElectronEvent, EventStream, PhotonEvent, StreamHeader, electron_stream, photon_stream,
                     sort_events, validate_stream)
from .optics import (Mask, OpticalSystem, ParabolicMirror, Ray, back_project, cat_mask,
                     effective_magnification, grating_mask, intersect, preset, reflect, trace_to_image,
                     transmit)
from .reconstruction import (Binning, GhostImage, accumulate_ghost_image, binarize, dice, raw_image,
                             subtract_accidentals)
from .resolution import FitParams, FitResult, GratingSpec, blur, fit, fwhm, ideal_target_image, model_image
from .source import BeamProfile, GroundTruth, SimConfig, draw_pair, simulate_run

__version__ = "0.1.0"
