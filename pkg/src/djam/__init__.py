"""Asynchronous single-neighbor gossip for personalized model learning.

The engine (:mod:`djam.engine`) solves

    minimize  1/2 sum_{i<j} W_ij ||theta_i - theta_j||^2 + sum_i f_i(theta_i)

by activating one random edge per round. :mod:`djam.oracle` supplies
reference solutions, :mod:`djam.admm` an ADMM baseline, and
:mod:`djam.experiment` the field-estimation benchmark.
"""

from djam.admm import AdmmState, admm_init, admm_round, run_admm
from djam.engine import (
    Schedule,
    SimState,
    Trace,
    contraction_factor,
    draw_edge,
    epoch_boundaries,
    gossip_round,
    init_state,
    max_error,
    own_model,
    run_djam,
)
from djam.losses import HuberFieldLoss, PersonalLoss, QuadraticLoss, local_solve, loss_eval, loss_grad, resolvent
from djam.network import Network, agent_weight_sum, build_network
from djam.oracle import Solution, fixed_point_residual, solve_exact_quadratic, solve_sync_jacobi

__version__ = "0.1.0"
