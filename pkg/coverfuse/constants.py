"""
Static constants and default parameters for coverfuse.
"""

from pathlib import Path

# Configuration paths
CONFIG_FILE = Path.cwd() / "coverfuse.json"
DEFAULT_CACHE_DIR = Path("cache")
DEFAULT_SCORES_DIR = Path("scores")
DEFAULT_DUMP_DIR = Path("dumps")

# Feature cache container
CACHE_MAGIC = b"CFSE0001"
CACHE_SUFFIX = ".cfse"
CACHE_ALIGNMENT = 8
SCORES_FILENAME = "scores.cfse"
SCORES_CSV_FILENAME = "scores.csv"
CHECKPOINT_FILENAME = "checkpoint.jsonl"
EXTRACT_ERRORS_FILENAME = "extract_errors.json"

# Audio
DEFAULT_SAMPLE_RATE = 44100
RESAMPLER_TAPS = 64
RESAMPLER_KAISER_BETA = 8.6
NATIVE_FORMATS = {"WAV", "WAVEX", "FLAC", "AIFF", "OGG"}
LIBROSA_FORMATS = (".mp3", ".m4a")

# MFCC (timbre)
DEFAULT_HOP = 512
DEFAULT_MFCC_WINDOW_SECONDS = 0.5
DEFAULT_N_MELS = 64
DEFAULT_MEL_FMIN = 0.0
DEFAULT_MEL_FMAX = 8000.0
DEFAULT_N_MFCC = 20
DEFAULT_LIFTER_EXPONENT = 0.6
MFCC_CHUNK_FRAMES = 128
LOG_FLOOR = 1e-10
# Mel bands are floored at this fraction of the frame's strongest band (-100 dB)
RELATIVE_MEL_FLOOR = 1e-10

# HPCP (pitch)
DEFAULT_HPCP_WINDOW = 4096
DEFAULT_HPCP_HOP = 2048
HPCP_BINS = 12
DEFAULT_HPCP_REFERENCE = 440.0
DEFAULT_HPCP_HARMONICS = 8
DEFAULT_HPCP_DECAY = 0.8
DEFAULT_HPCP_MIN_FREQ = 40.0
DEFAULT_HPCP_MAX_FREQ = 5000.0
DEFAULT_HPCP_PEAK_FLOOR_DB = -60.0
DEFAULT_HPCP_BIN_WIDTH = 4.0 / 3.0  # semitones covered by one peak's cos^2 window
PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
PITCH_CLASS_OF_REFERENCE = 9  # 440 Hz is an A

# Beat tracking
DEFAULT_TEMPO_BIASES = (60, 120, 180)
DEFAULT_BEAT_TIGHTNESS = 100.0
DEFAULT_TEMPO_PRIOR_OCTAVES = 0.9
DEFAULT_ONSET_HOP = 512
MIN_BEAT_CLIP_SECONDS = 2.0

# Blocks
DEFAULT_BLOCK_BEATS = 20
DEFAULT_FRAMES_PER_BLOCK = 400
DEFAULT_SSM_DIM = 32
DEFAULT_HPCP_WINDOWS_PER_BEAT = 2
DEFAULT_BLOCK_STRIDE = 1
ZNORM_MIN_STD = 1e-12

# Cross-similarity and fusion
DEFAULT_KAPPA = 0.1
DEFAULT_KNN = 20
DEFAULT_EARLY_ITERATIONS = 3
DEFAULT_LATE_ITERATIONS = 20
SIGMA_FLOOR = 1e-12
LATE_FUSION_EPSILON = 1e-9
NEIGHBOR_COUNT_TOLERANCE = 1e-9
MAX_FUSION_CHANNELS = 4

# Smith-Waterman
DEFAULT_MATCH_SCORE = 1.0
DEFAULT_MISMATCH_PENALTY = 1.0
DEFAULT_GAP_PENALTY = 0.5

# Channels
CHANNEL_MFCC = "mfcc"
CHANNEL_SSM = "ssm"
CHANNEL_HPCP = "hpcp"
CHANNEL_EARLY = "early"
CHANNEL_OR = "or"
FEATURE_CHANNELS = (CHANNEL_MFCC, CHANNEL_SSM, CHANNEL_HPCP)
ALL_CHANNELS = FEATURE_CHANNELS + (CHANNEL_EARLY, CHANNEL_OR)
DEFAULT_CHANNELS = FEATURE_CHANNELS + (CHANNEL_EARLY,)

# Evaluation
TOP_N_LEVELS = (1, 10)

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
