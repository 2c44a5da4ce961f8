"""Multi-beam synthesis of coupled antenna arrays in a generalized-scattering-matrix surrogate."""

from .coupled import (CouplingMatrix, CoupledSolution, CoupledSystem, DofAssignment, apply_phase_shift,
                      assemble_element_gsms, shift_elements, solve_coupled)
from .errors import *  # noqa: F401,F403
from .manifolds import (DesignPoint, ExcitationSet, Gsm, TangentVector, excitation_project_tangent,
                        excitation_retract, retract, riemannian_gradient, us_project_tangent, us_random,
                        us_retract)
from .optimizer import (DEFAULT_ALPHAS, OptimizationTrace, Problem, StageSchedule, descend_stage, dof_strategy,
                        euclidean_gradient, initial_design, staged_optimize)
from .pattern import (LHCP, RHCP, BeamSpec, ModalFarFieldSet, SphereFields, beam_cost, chebyshev_baseline,
                      far_field, metrics, standard_beam_table, penalty_gamma, scan_beam_table, total_cost)
from .realization import (RealizationTarget, backtransform_gsm, chi_sweep, eig_terminated, fit_toy_element,
                          random_toy_element, realization_target, terminate)
from .toyem import (ArrayModel, build_cut_fields, build_sphere_fields, coupling_matrix, export_dataset,
                    hertzian_mutual_impedance, import_dataset, modal_far_field)

__version__ = "0.1.0"
