"""
EGTSyn Network
==============

Drug-combination synergy classifier:

  drug  -> dual graph -> EGNN (GCN stack per graph, pooled) -> token sequence E
        -> GTD block: Z = LN(MultiHead(E, E, E)), Z' = FFN(Z)
        -> long residual: [flatten(Z') | flatten(E)] projected to 2·d
  cell  -> 3-layer ReLU MLP (dropout after the first two) -> cell embedding c
  pair  -> [eA | c | eB | c] -> FC(ReLU, dropout) x2 -> 1 unit -> sigmoid

Variants (ablations):
  EGTSyn  dual graph + transformer
  GTSyn   atom graph only + transformer
  EGSyn   dual graph, no transformer (pooled embeddings go straight to the projection)
  GSyn    atom graph only, no transformer

The architecture is order-sensitive in (A, B); ``predict_pair`` and
``predict_proba`` average both orders so inference is symmetric.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from config import settings
from engine.tensor_core import (
    concat_cols,
    concat_rows,
    constant,
    flatten_rows,
    gather_rows,
    l2_penalty,
    no_grad,
    sigmoid,
)
from network.layers import (
    MLP,
    POOLINGS,
    FeedForward,
    GCNStack,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
)
from utils.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

VARIANTS = ("EGTSyn", "GTSyn", "EGSyn", "GSyn")


@dataclass
class ModelConfig:
    variant: str = settings.MODEL_VARIANT
    gcn_layers: int = settings.GCN_LAYERS
    gcn_hidden: int = settings.GCN_HIDDEN
    graph_embed_dim: int = settings.GRAPH_EMBED_DIM
    attention_heads: int = settings.ATTENTION_HEADS
    ffn_hidden: int = settings.FFN_HIDDEN
    cell_input_dim: int = settings.CELL_INPUT_DIM
    cell_hidden: tuple = field(default_factory=lambda: tuple(settings.CELL_HIDDEN))
    cell_embed_dim: int = settings.CELL_EMBED_DIM
    head_hidden: tuple = field(default_factory=lambda: tuple(settings.HEAD_HIDDEN))
    dropout_rate: float = settings.DROPOUT_RATE
    pooling: str = settings.GRAPH_POOLING
    layer_norm_eps: float = settings.LAYER_NORM_EPS
    seed: int = settings.SEED

    def __post_init__(self):
        self.cell_hidden = tuple(int(w) for w in self.cell_hidden)
        self.head_hidden = tuple(int(w) for w in self.head_hidden)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown model variant '{self.variant}'. Use one of {', '.join(VARIANTS)}")
        if self.attention_heads < 1 or self.graph_embed_dim % self.attention_heads != 0:
            raise ConfigError(
                f"graph_embed_dim ({self.graph_embed_dim}) must be divisible by "
                f"attention_heads ({self.attention_heads})"
            )
        if self.gcn_layers < 1:
            raise ConfigError(f"gcn_layers must be at least 1, got {self.gcn_layers}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"Unknown pooling '{self.pooling}'. Use one of {sorted(POOLINGS)}")
        widths = (self.gcn_hidden, self.graph_embed_dim, self.ffn_hidden, self.cell_input_dim,
                  self.cell_embed_dim, *self.cell_hidden, *self.head_hidden)
        if any(w < 1 for w in widths):
            raise ConfigError("every layer width must be positive")
        return self

    @property
    def uses_bond_graph(self):
        return self.variant in ("EGTSyn", "EGSyn")

    @property
    def uses_transformer(self):
        return self.variant in ("EGTSyn", "GTSyn")

    @property
    def token_count(self):
        return 2 if self.uses_bond_graph else 1

    def to_dict(self):
        d = asdict(self)
        d["cell_hidden"] = list(self.cell_hidden)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class GTDBlock(Module):
    """Transformer encoder over the EGNN tokens plus the long residual projection."""

    def __init__(self, config, rng):
        super().__init__()
        d = config.graph_embed_dim
        self.use_transformer = config.uses_transformer
        if self.use_transformer:
            self.mha = self.add_child("mha", MultiHeadAttention(d, config.attention_heads, rng))
            self.ln = self.add_child("ln", LayerNorm(d, config.layer_norm_eps))
            self.ffn = self.add_child("ffn", FeedForward(d, config.ffn_hidden, rng))
        residual_width = config.token_count * d * (2 if self.use_transformer else 1)
        self.proj = self.add_child("proj", Linear(residual_width, 2 * d, rng))

    def __call__(self, E):
        if not self.use_transformer:
            return self.proj(flatten_rows(E))
        Z = self.ln(self.mha(E, E, E))
        Z2 = self.ffn(Z)
        return self.proj(concat_cols([flatten_rows(Z2), flatten_rows(E)]))


class EGTSynModel(Module):
    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        rng = np.random.default_rng(config.seed)
        d = config.graph_embed_dim
        gcn = Module()
        self.gcn_atom = gcn.add_child("atom", GCNStack(
            settings.NODE_FEATURE_DIM, config.gcn_hidden, d, config.gcn_layers, rng, config.pooling))
        self.gcn_bond = None
        if config.uses_bond_graph:
            self.gcn_bond = gcn.add_child("bond", GCNStack(
                settings.NODE_FEATURE_DIM, config.gcn_hidden, d, config.gcn_layers, rng, config.pooling))
        self.add_child("gcn", gcn)
        self.gtd = self.add_child("gtd", GTDBlock(config, rng))
        self.cell = self.add_child("cell", MLP(
            [config.cell_input_dim, *config.cell_hidden, config.cell_embed_dim], rng, config.dropout_rate,
            activate_last=True, dropout_last=False))
        pair_width = 2 * (2 * d + config.cell_embed_dim)
        self.head = self.add_child("head", MLP(
            [pair_width, *config.head_hidden, 1], rng, config.dropout_rate,
            activate_last=False, dropout_last=False))
        self.dropout_rng = np.random.default_rng(config.seed + 1)
        logger.debug("Built %s with %d parameters", config.variant, self.param_count())

    @property
    def variant(self):
        return self.config.variant

    # ─── Sub-blocks ──────────────────────────────────────────────────────

    def cell_reduce(self, x, training=False, rng=None):
        """B x cell_input_dim -> B x cell_embed_dim."""
        x = constant(x)
        if x.shape[1] != self.config.cell_input_dim:
            raise DimensionError(
                f"cell vector width {x.shape[1]} does not match cell_input_dim {self.config.cell_input_dim}"
            )
        return self.cell(x, training, rng or self.dropout_rng)

    def egnn_forward(self, dual):
        """Token sequence: row 0 from the atom graph, row 1 from the atom-bond graph."""
        tokens = [self.gcn_atom(dual.atom_graph)]
        if self.gcn_bond is not None:
            tokens.append(self.gcn_bond(dual.atom_bond_graph))
        return concat_rows(tokens)

    def gtd_forward(self, dual):
        """1 x 2·graph_embed_dim drug embedding."""
        return self.gtd(self.egnn_forward(dual))

    # ─── Pair scoring ────────────────────────────────────────────────────

    def forward(self, drugs_a, drugs_b, cells, training=False, rng=None):
        """
        Scores B ordered pairs. ``drugs_a``/``drugs_b`` are lists of DualGraph,
        ``cells`` is B x cell_input_dim. Returns a B x 1 probability tensor.
        Each distinct drug is embedded once per call.
        """
        cells = np.atleast_2d(np.asarray(cells, dtype=np.float64))
        if len(drugs_a) != len(drugs_b) or len(drugs_a) != cells.shape[0]:
            raise DimensionError(
                f"batch mismatch: {len(drugs_a)} drug A, {len(drugs_b)} drug B, {cells.shape[0]} cell rows"
            )
        if cells.shape[1] != self.config.cell_input_dim:
            raise ConfigError(
                f"cell vector width {cells.shape[1]} does not match model cell_input_dim "
                f"{self.config.cell_input_dim}"
            )
        slots = {}
        unique = []
        for dual in list(drugs_a) + list(drugs_b):
            if id(dual) not in slots:
                slots[id(dual)] = len(unique)
                unique.append(dual)
        table = concat_rows([self.gtd_forward(dual) for dual in unique])
        ea = gather_rows(table, [slots[id(d)] for d in drugs_a])
        eb = gather_rows(table, [slots[id(d)] for d in drugs_b])
        rng = rng or self.dropout_rng
        c = self.cell_reduce(cells, training, rng)
        r = concat_cols([ea, c, eb, c])
        return sigmoid(self.head(r, training, rng))

    def predict_proba(self, drugs_a, drugs_b, cells):
        """Symmetrized eval-mode probabilities, one per pair."""
        with no_grad():
            forward = self.forward(drugs_a, drugs_b, cells).data[:, 0]
            reverse = self.forward(drugs_b, drugs_a, cells).data[:, 0]
        return (forward + reverse) / 2.0

    def predict_pair(self, drug_a, drug_b, cell):
        return float(self.predict_proba([drug_a], [drug_b], np.atleast_2d(cell))[0])

    def regularizer(self, delta):
        return l2_penalty(self.parameters().values(), delta)


def build_variant(config):
    if isinstance(config, str):
        config = ModelConfig(variant=config)
    if config.variant not in VARIANTS:
        raise ConfigError(f"Unknown model variant '{config.variant}'. Use one of {', '.join(VARIANTS)}")
    return EGTSynModel(config)
