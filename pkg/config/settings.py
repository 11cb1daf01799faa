import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _widths(name, default):
    """Parses a comma-separated width list such as "2048,512"."""
    raw = os.getenv(name, default)
    return tuple(int(w) for w in raw.split(",") if w.strip())


# ─── Reproducibility ─────────────────────────────────────────────────────
# Every random draw (init, shuffling, dropout, splits) derives from this seed
SEED = int(os.getenv("EGTSYN_SEED", 42))

# ─── Optimizer (Adam) ────────────────────────────────────────────────────
LEARNING_RATE = float(os.getenv("LEARNING_RATE", 1e-4))
ADAM_BETA1 = float(os.getenv("ADAM_BETA1", 0.9))
ADAM_BETA2 = float(os.getenv("ADAM_BETA2", 0.999))
ADAM_EPS = float(os.getenv("ADAM_EPS", 1e-8))

# ─── Training Loop ───────────────────────────────────────────────────────
EPOCHS = int(os.getenv("EPOCHS", 300))
BATCH_SIZE = int(os.getenv("BATCH_SIZE", 128))
L2_DELTA = float(os.getenv("L2_DELTA", 1e5))        # penalty = (2/delta) * sum(theta^2)
DROPOUT_RATE = float(os.getenv("DROPOUT_RATE", 0.2))

# ─── Architecture ────────────────────────────────────────────────────────
MODEL_VARIANT = os.getenv("MODEL_VARIANT", "EGTSyn")
GCN_LAYERS = int(os.getenv("GCN_LAYERS", 2))
GCN_HIDDEN = int(os.getenv("GCN_HIDDEN", 156))
GRAPH_EMBED_DIM = int(os.getenv("GRAPH_EMBED_DIM", 128))
ATTENTION_HEADS = int(os.getenv("ATTENTION_HEADS", 4))
FFN_HIDDEN = int(os.getenv("FFN_HIDDEN", 256))
CELL_INPUT_DIM = int(os.getenv("CELL_INPUT_DIM", 954))  # 945 also seen in the literature
CELL_HIDDEN = _widths("CELL_HIDDEN", "2048,512")
CELL_EMBED_DIM = int(os.getenv("CELL_EMBED_DIM", 256))
HEAD_HIDDEN = _widths("HEAD_HIDDEN", "1024,256")
GRAPH_POOLING = os.getenv("GRAPH_POOLING", "max")   # max | sum | mean
LAYER_NORM_EPS = float(os.getenv("LAYER_NORM_EPS", 1e-5))

# Node feature width shared by atom and bond nodes
NODE_FEATURE_DIM = 78

# ─── Labels & Evaluation ─────────────────────────────────────────────────
SYNERGY_THRESHOLD = float(os.getenv("SYNERGY_THRESHOLD", 10.0))       # loewe > 10 → synergistic
ANTAGONISM_THRESHOLD = float(os.getenv("ANTAGONISM_THRESHOLD", 0.0))  # loewe < 0 → not synergistic
DECISION_THRESHOLD = float(os.getenv("DECISION_THRESHOLD", 0.5))
N_FOLDS = int(os.getenv("N_FOLDS", 5))
PROB_CLAMP = 1e-7

# ─── Gradient Checking ───────────────────────────────────────────────────
GRADCHECK_TOLERANCE = float(os.getenv("GRADCHECK_TOLERANCE", 1e-4))
GRADCHECK_STEP = float(os.getenv("GRADCHECK_STEP", 1e-5))

# ─── Featurization ───────────────────────────────────────────────────────
FEATURIZE_JOBS = int(os.getenv("FEATURIZE_JOBS", 1))  # joblib workers; 1 = in-process

# ─── Paths & Logging ─────────────────────────────────────────────────────
CHECKPOINT_DIR = os.getenv(
    "CHECKPOINT_DIR", os.path.join(os.path.dirname(os.path.dirname(__file__)), "checkpoints")
)
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = os.getenv("LOG_FORMAT", "%(asctime)s [%(levelname)s] %(name)s: %(message)s")

TOOLKIT_VERSION = "1.0.0"
