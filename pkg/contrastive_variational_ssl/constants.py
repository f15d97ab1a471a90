"""Constants for the contrastive-variational tabular SSL toolkit.

This module contains the defaults shared across the toolkit components,
including numeric floors, default architecture and optimizer settings,
experiment grids and output file names.
"""

# Service name used by every structured logger in the package
SERVICE_NAME = "contrastive-variational-ssl"

# Numeric guards
NORM_FLOOR = 1e-12
STD_FLOOR = 1e-12
LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
# Masked self-similarities end at least this far below every other logit of their row
SELF_SIMILARITY_MARGIN = 1e3

# Gradient verification
GRADCHECK_EPS = 1e-5
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_DENOMINATOR_FLOOR = 1e-8
# Smallest distance of a hidden ReLU pre-activation from zero in the end-to-end check
GRADCHECK_RELU_MARGIN = 0.5

# Model defaults
DEFAULT_HIDDEN_DIMS = [128, 64]
DEFAULT_LATENT_DIM = 16
DEFAULT_PROJECTION_DIM = 32

# Loss defaults
DEFAULT_LAMBDA1 = 1.0
DEFAULT_LAMBDA2 = 1.0
DEFAULT_TAU = 0.5

# Optimizer defaults
OPTIMIZER_KINDS = ["sgd", "adam", "adamw"]
DEFAULT_OPTIMIZER = "adamw"
DEFAULT_LR = 0.002
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8
DEFAULT_ADAMW_WEIGHT_DECAY = 0.01

# Training defaults
DEFAULT_STEPS = 10000
DEFAULT_BATCH_SIZE = 128
DEFAULT_LOG_INTERVAL = 100

# Data defaults
DEFAULT_TRAIN_FRACTION = 0.8
DEFAULT_VAL_FRACTION = 0.2
# Validation chunks need a positive and a negative pair
MIN_VALIDATION_ROWS = 2
DEFAULT_NOISE_SIGMA = 0.1
DEFAULT_MASK_PROB = 0.0
DEFAULT_SMOTE_K = 5

# Probe defaults
DEFAULT_CV_FOLDS = 5
DEFAULT_PROBE_STEPS = 500
DEFAULT_PROBE_LR = 0.01
DEFAULT_PROBE_OPTIMIZER = "adam"

# Sweep grids and display names
OPTIMIZER_GRID = ["sgd", "adam", "adamw"]
LR_GRID = [0.005, 0.003, 0.002, 0.001]
OPTIMIZER_DISPLAY_NAMES = {"sgd": "SGD", "adam": "Adam", "adamw": "AdamW"}

# Ablation settings, in reporting order: (label, switch to enable)
ABLATION_SETTINGS = [
    ("Full Model (Baseline)", None),
    ("w/o Contrastive Loss", "disable_contrastive"),
    ("w/o Variational Module", "disable_variational"),
    ("w/o Data Augmentation", "disable_augmentation"),
]

# Output layout
RESOLVED_CONFIG_FILE = "config.resolved"
LOSS_CURVE_FILE = "loss_curve.csv"
METRICS_FILE = "metrics.json"
CHECKPOINT_FILE = "model.npz"
RESULTS_FILE = "results.csv"
RUNS_FILE = "runs.csv"
RESULTS_TABLE_FILE = "results.txt"
CELLS_DIR = "cells"

LOSS_CURVE_COLUMNS = ["step", "train_loss", "val_loss", "nce", "recon_nll", "kl"]
METRIC_COLUMNS = ["acc", "f1", "recall", "precision"]
METRIC_DECIMALS = 3
