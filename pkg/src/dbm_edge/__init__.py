"""Numerics for beta-Dyson Brownian motion near the spectral edge: free
convolution with the semicircle law, the particle dynamics, characteristic
flow checks and desk-scale experiments."""
from .characteristics import (CharacteristicPath, FlowFamily, RigidityProfile, domain_contains,
                              f_profile, flow_between, flow_forward, lattice_points,
                              monotonicity_report, nearest_lattice_point)
from .config import ConfigError, ExperimentConfig, resolve
from .dbm import (NoiseStream, ParticleSystem, SchemeOptions, StepFailure, beta_ensemble_sample,
                  evolve, evolve_coupled, step)
from .freeconv import (DomainError, EdgeExpansion, FreeConvolution, NoBracketError, NonConvergence,
                       free_convolution)
from .harness import ExperimentReport, parse_measure, run_experiment
from .measures import (FiniteMeasure, MeasureError, build_discrete, classical_locations, delta,
                       empirical, gauss_atoms, inverted_cdf, levy_distance, levy_distance_to_cdf,
                       uniform_atoms)
from .stieltjes import PoleError, stieltjes, stieltjes_deriv

__version__ = "0.1.0"
