# Core modules for the doubly mean-reflected MFBSDE solver

from .skorokhod import solve_skorokhod, clipping_oracle, root_solve_monotone
from .measure import mean, wasserstein1_1d, d1_to_dirac0
from .mfbsde import simulate_brownian, solve_mfbsde, stability_gap
from .reflected import solve_reflected, solve_single_reflected, audit_solution, picard_step
from .persistence import PersistenceManager

__all__ = ['solve_skorokhod', 'clipping_oracle', 'root_solve_monotone',
           'mean', 'wasserstein1_1d', 'd1_to_dirac0',
           'simulate_brownian', 'solve_mfbsde', 'stability_gap',
           'solve_reflected', 'solve_single_reflected', 'audit_solution', 'picard_step',
           'PersistenceManager']
