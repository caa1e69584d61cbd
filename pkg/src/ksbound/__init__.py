"""Boundedness certificates, Moser iteration schedules and a finite-volume
simulator for quasilinear Keller-Segel chemotaxis systems."""

from .certificate import (Certificate, CriticalityError, ProblemParams, check_certificate,
                          find_certificate, interpolation_exponents)
from .model_specs import ModelSpec, classical, power_law, pure_diffusion, volume_filling
from .moser import MoserProblem, bound_recursion, build_schedule, select_r_s_lambda
from .scenario import Scenario, parse_scenario, render_scenario
from .simulator import Grid, Profile, SimState, init, manufactured_convergence, monitors, run, step

__version__ = "0.1.0"
