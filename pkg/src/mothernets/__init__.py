"""MotherNets: train neural-network ensembles by hatching members from shared cores."""
from .archspec import (ConvBlockSpec, ConvLayerSpec, DenseLayerSpec, EnsembleSpec, NetworkArch, arch_vector,
                       conv_arch, dense_arch, edit_distance, param_count, vectorize)
from .clustering import ClusterPlan, cluster_greedy_tau, cluster_kmeans
from .diagnostics import CovarianceReport, SoftmaxSamples, chebyshev_bound, collect_samples, covariance_report
from .engine import (Dataset, TrainConfig, TrainLog, WeightedNetwork, evaluate, forward, gradients, init_network,
                     load_dataset, load_weights, save_dataset, save_weights, train)
from .errors import MotherNetsError, ValidationError
from .inference import (PredictionMatrix, SharedPlan, build_shared, chi, oracle_accuracy, predict_average,
                        predict_vote, shared_finetune, shared_infer)
from .mothernet import MotherNetResult, build, build_conv, build_fc
from .pipeline import RunConfig, RunReport, bag_sample, cost_report, run
from .transforms import (HatchPlan, TransformStep, deepen, deepen_residual, enlarge_filter, hatch, perturb,
                         plan_hatch, widen, widen_conv)

__version__ = "0.1.0"
