"""Reverse-transition steps, one module per method."""

from .ddim import ddim_step, ddim_mean
from .ding import ding_step, ding_delayed_step, ding_conditional, decoupled_log_potential, guidance_weight
from .replacement import replacement_step
from .mcgdiff import mcgdiff_step
from .pnpflow import pnpflow_step
from .flowdps import flowdps_step
from .diffpir import diffpir_step, ddnm_step
from .dps import dps_analytic_step, dps_conditional

__all__ = [
    "ddim_step",
    "ddim_mean",
    "ding_step",
    "ding_delayed_step",
    "ding_conditional",
    "decoupled_log_potential",
    "guidance_weight",
    "replacement_step",
    "mcgdiff_step",
    "pnpflow_step",
    "flowdps_step",
    "diffpir_step",
    "ddnm_step",
    "dps_analytic_step",
    "dps_conditional",
]
