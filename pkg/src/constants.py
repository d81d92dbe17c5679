# ============================================================================
# TOY DIMENSIONS
# ============================================================================

IMAGE_SIZE = 64            # Square toy images, 64x64x3
IMAGE_CHANNELS = 3
DOWNSAMPLE_FACTOR = 4      # Encoder stride product f
EMBED_DIM = 32             # Codebook embedding dimension d
VOCAB_SIZE = 256           # Codebook entries V
DEFAULT_SCHEDULE = "1x1,2x2,4x4,8x8,16x16"
TOKENIZER_HIDDEN = 64      # Conv channels inside encoder/decoder

# ============================================================================
# TOKENIZER TRAINING
# ============================================================================

COMMITMENT_WEIGHT = 0.25
EMA_DECAY = 0.99
DEAD_CODE_THRESHOLD = 1e-3  # EMA count below which a code is re-seeded
EMA_EPSILON = 1e-5          # Laplace smoothing of EMA cluster counts
NN_CHUNK_ROWS = 1024        # Rows per chunk in exhaustive nearest-neighbour search

# ============================================================================
# BACKBONE
# ============================================================================

BACKBONE_LAYERS = 4
MODEL_DIM = 128
NUM_HEADS = 4
FFN_MULTIPLIER = 4
INIT_STD = 0.02

# ============================================================================
# ADAPTERS AND LOSSES
# ============================================================================

ADAPTER_RANK = 4
ADAPTER_ALPHA = 8.0
ADAPTER_TARGETS = ("query", "key", "value", "output")

LAMBDA_KL = 0.1
LAMBDA_PERC = 0.25
LAMBDA_MSE = 0.5

DISTILL_LR = 1e-4            # 1e-6 at 2B scale; toy scale needs a larger rate
DISTILL_WEIGHT_DECAY = 1e-2
RESTORER_CHANNELS = 32
RESTORER_WEIGHT = 1.0

# ============================================================================
# DEGRADATION
# ============================================================================

SIGMA_RANGE = (0.0, 3.0)
DOWNSAMPLE_FACTORS = (1.0, 2.0, 4.0)
NOISE_RANGE = (0.0, 0.08)
QUALITY_RANGE = (30, 95)
MIN_JPEG_QUALITY = 1
MAX_JPEG_QUALITY = 100
JPEG_FULL_CHROMA_QUALITY = 90   # 4:4:4 at or above, 4:2:0 below
KERNEL_RADIUS_SIGMAS = 3        # Kernel side is 2*ceil(3*sigma)+1

# ============================================================================
# SAMPLING
# ============================================================================

DEFAULT_TEMPERATURE = 1.0
GREEDY_TEMPERATURE = 1e-5   # Temperatures at or below decode by argmax

# ============================================================================
# METRICS
# ============================================================================

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_BENCH_IMAGES = 3

# ============================================================================
# CHECKPOINTS AND ARTIFACTS
# ============================================================================

CHECKPOINT_MAGIC = b"SWCK"
CHECKPOINT_FORMAT_VERSION = 1
CONFIG_HASH_CHARS = 12
LOSSLESS = "lossless"          # Manifest spelling of the lossless JPEG sentinel

# ============================================================================
# BOUNDS
# ============================================================================

MIN_IMAGE_SIZE = 8
MAX_IMAGE_SIZE = 1024
MIN_VOCAB_SIZE = 2

# ============================================================================
# SEED STREAMS (counters passed to derive_seed with the master seed)
# ============================================================================

STREAM_TOYDATA = 1
STREAM_DEGRADE = 2
STREAM_TOKENIZER = 3
STREAM_TEACHER = 4
STREAM_DISTILL = 5
STREAM_SAMPLING = 6
STREAM_ZERO_SHOT = 7
STREAM_BENCH = 8
