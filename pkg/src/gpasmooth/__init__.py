"""Grid point approximation for distributed kernel smoothing."""

from .bandwidth import CandidateSet, WeightFn, cv_score, loo_cv, minimize_cv, oneshot_bandwidth, pilot_bandwidth
from .cluster import Cluster, CostLedger, partition_random, partition_sorted, run_bandwidth, run_predict, run_train
from .gpa import GpaModel, Grid, MultiGrid, design_grid, fit_grid, load_model, save_model
from .kernels import KernelSpec, epanechnikov, fourth_order, polynomial
from .moments import MomentStats, Sample, local_moments, merge, nw_estimate
from .synthdata import generate, get_setting, optimal_bandwidth

__version__ = "0.1.0"
