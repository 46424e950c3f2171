"""Heterogeneity-aware kernel logistic regression with a hierarchical group kernel."""

from .baseline import LinearLogisticBaseline
from .data import (Dataset, GroupDesign, GroupHierarchy, ScalingSpec, SplitSpec, build_group_design,
                   read_dataset_csv, scale_covariates, scale_split, temporal_split, write_dataset_csv)
from .dnr import DnrConfig, dnr_predict, partition_subsets
from .errors import (ConfigError, DataError, DivergenceError, HarnessError, NumericalError, SolverError)
from .experiment import ExperimentConfig, run_experiment
from .hyperopt import (OptimizerConfig, TrainTrace, UnconstrainedParams, cv_loss_single_draw, hypergradient,
                       sample_draw, train_sgd)
from .kernel import (GramMatrix, GroupKernelParams, HarnessGram, KernelParams, brute_force_kernel_oracle,
                     harness_kernel_matrix, harness_kernel_pair)
from .klr import FittedLocalModel, SolverConfig, fit_klr, klr_objective, predict_out_of_sample
from .metrics import (auroc, heterogeneity_report, importance_matrix, kernel_heatmap, prauc,
                      stratified_report)
from .model import HarnessModel
from .simulate import SimConfig, SimSetting, generate_dataset, interaction_set

__version__ = "0.1.0"
