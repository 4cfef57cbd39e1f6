"""Single-pass uncertainty from internal classifiers with GP heads.

The public surface is re-exported here; see the submodules for details.
"""

__version__ = "0.1.0"

from .baselines import Ensemble, build_sngp, energy_score, ensemble_scores, mc_dropout_scores, softmax_entropy
from .combiner import (CombinationHead, choose_ns, combined_uncertainty, fit_combination_head, fit_lr,
                       predict_with_uncertainty, proxy_labels)
from .datasets import (Dataset, ImbalanceSpec, apply_imbalance, gen_gaussian_classes, gen_ood_grid, gen_spiral,
                       load_csv, split_test, split_validation)
from .estimators import (DeepEnsembleClassifier, DNNClassifier, MCDropoutClassifier, SNGPClassifier,
                         TulipClassifier, make_estimator)
from .gp import GpHead, dempster_shafer, laplace_update, predict_adjusted, rff_features
from .metrics import EvalReport, SurfaceGrid, accuracy, auroc, ece, surface_bins
from .nn import DenseLayer, DropoutLayer, Network, ResidualBlock, mlp, residual_mlp, spectral_normalize
from .preservation import collapse_resistance, distortion, fit_preservation_weights, layer_distances
from .sdn import SdnModel, build_sdn, exit_logits, place_ics, prediction_switches, sdn_loss, train_sdn
from .training import TrainConfig, train
