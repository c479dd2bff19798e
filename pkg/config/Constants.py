"""
Constants used throughout the pipeline
"""

# Bit widths available to the mixed-precision policy
BIT_CHOICES = (2, 3, 4, 8)
FORCED_BITS = 8
AUTOENCODER_BITS = 8

# Bit policy cut points on the normalized layer score
BIT_THRESHOLDS = (0.25, 0.5, 0.75)

# Scale search grid: multipliers 0.21 .. 1.20 of max|x| / qmax (unit multiplier included)
SCALE_GRID_START = 21
SCALE_GRID_STOP = 121
SCALE_GRID_DENOMINATOR = 100.0

# Coordinate-descent sweeps per block
RECONSTRUCTION_SWEEPS = 2

# Adam constants (only the learning rate is configurable)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Hard-feature mining fraction for L_t-s
HARD_FRACTION = 0.1

# Desk-scale geometry
IMAGE_SIZE = 64
TEACHER_CHANNELS = 8
PDN_HIDDEN_CHANNELS = (16, 32, 32)
STUDENT_WIDTH_MULTIPLIER = 2
LATENT_DIMS = 16
FULL_LATENT_DIMS = 64
AUTOENCODER_CHANNELS = 32

# Calibration and evaluation
CALIBRATION_SIZE = 32
FPR_LIMIT = 0.3
MAX_PRO_THRESHOLDS = 512
OVERLAY_ALPHA = 0.5

# Dataset defaults: train / test-normal / test-anomalous
DATASET_COUNTS = (200, 50, 50)
VARIANCE_RATIO_MIN = 10.0

# Progress logging cadence during training
LOG_EVERY = 100

# Stage names used in reports and heatmap file names
STAGE_BASELINE = "baseline"
STAGE_QUANT = "quant"
STAGE_RAAD = "raad"
EVAL_STAGES = (STAGE_BASELINE, STAGE_QUANT, STAGE_RAAD)
