"""awdlab: a desk-scale laboratory for adaptive weight decay experiments."""

from .adversarial import AttackConfig, pgd_attack, robust_accuracy
from .config import ExperimentConfig, load_config
from .data import (Dataset, NoiseSpec, flip_labels_symmetric, load_csv_dataset,
                   load_dataset, pad_and_crop, save_dataset, split_train_val,
                   synth_clusters, synth_images)
from .dog import DogRow, DogTrace, dog_value, estimate_dog, plateau_epoch
from .errors import (AwdlabError, ConfigError, DimensionError, EstimationError,
                     NonFiniteGradientError, StateError, StratificationError)
from .harness import (GridResult, RunResult, alternating_1d_search,
                      geometric_sequence, grid_search_2d, run_experiment,
                      synthetic_landscape)
from .model import (Model, accuracy, build_mlp, build_small_cnn, grad_l2_norm,
                    load_checkpoint, param_l2_norm, restore_params,
                    save_checkpoint)
from .optim import (AdaDecay, Adaptive, Fixed, OptimizerState, StepInfo,
                    adadecay_step, awd_lambda, awd_step, cosine_lr, sgd_fixed_step,
                    sgd_step)
from .pruning import PruneReport, global_l1_prune, prune_sweep
from .tensor import (Tape, Tensor, finite_difference_check, softmax_cross_entropy,
                     tape)
from .train import train_epoch

__version__ = "0.1.0"
