"""Multichannel blind deconvolution with focusing constraints."""

__version__ = "0.1.0"

from .altmin import AltMinConfig, SolverDivergence, alternate, solve_linear_ls
from .fbd import (INF, LSBD_CONFIG, FbdResult, HomotopySchedule, NormalizationError,
                  fbd_pipeline, fibd, fpr, ibd, ibd_misfit, lsbd, lsbd_misfit, lspr,
                  lspr_misfit, suggest_front_channel)
from .focusing import appendix_check, focus_report, second_moment_functional
from .model import (ChannelSet, DegenerateChannelError, InterferogramSet, SolveReport,
                    SourceAutocorr, build_interferograms, max_normalize_interferograms)
from .seqcore import Sequence, add_noise, convolve, delta, energy, reverse, xcorr
from .synth import ExperimentSpec, make_experiment, recovery_score

__all__ = [
    "AltMinConfig", "SolverDivergence", "alternate", "solve_linear_ls",
    "INF", "LSBD_CONFIG", "FbdResult", "HomotopySchedule", "NormalizationError",
    "fbd_pipeline", "fibd", "fpr", "ibd", "ibd_misfit", "lsbd", "lsbd_misfit", "lspr",
    "lspr_misfit", "suggest_front_channel",
    "appendix_check", "focus_report", "second_moment_functional",
    "ChannelSet", "DegenerateChannelError", "InterferogramSet", "SolveReport",
    "SourceAutocorr", "build_interferograms", "max_normalize_interferograms",
    "Sequence", "add_noise", "convolve", "delta", "energy", "reverse", "xcorr",
    "ExperimentSpec", "make_experiment", "recovery_score",
]
