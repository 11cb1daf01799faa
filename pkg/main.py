"""
EGTSyn command-line entry point.

    python main.py featurize --drugs drugs.csv --out graphs/
    python main.py split     --data drugs.csv cells.csv synergy.csv --split leave_drug --out plan.json
    python main.py train     --data drugs.csv cells.csv synergy.csv --variant EGTSyn --out ckpt/egtsyn.json
    python main.py evaluate  --ckpt ckpt/egtsyn.json --data ... --report reports/fold0.json
    python main.py ablate    --data ... --epochs 50 --out ablation/
    python main.py predict   --ckpt ckpt/egtsyn.json --drug-a CCO --drug-b c1ccccc1O --cell-id A549 --cells cells.csv
    python main.py gradcheck --variant all

Exit codes: 0 success, 1 runtime/data error, 2 usage error, 3 training
aborted on a non-finite loss.

``--config FILE`` reads flat ``key=value`` lines (``#`` comments) whose keys
are flag names; they become defaults, so explicit flags still win.
"""

import argparse
import logging
import os
import sys

# Add project root to path
sys.path.append(os.path.abspath(os.path.dirname(__file__)))

from cli import commands
from config import settings
from data.splits import PROTOCOLS
from network.egtsyn import VARIANTS
from network.layers import POOLINGS
from utils.errors import ConfigError, EGTSynError, NonFiniteLossError

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NONFINITE = 0, 1, 2, 3


def _widths(text):
    try:
        return tuple(int(w) for w in str(text).split(",") if w.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _add_data(p):
    p.add_argument("--data", nargs=3, required=True, metavar=("DRUGS", "CELLS", "SYNERGY"),
                   help="drug, cell-line and synergy CSV files")


def _add_split(p):
    p.add_argument("--split", choices=PROTOCOLS, default="kfold", help="split protocol")
    p.add_argument("--fold", type=int, default=0, help="fold index within the split plan")
    p.add_argument("--folds", type=int, default=settings.N_FOLDS, help="number of folds (k)")


def _add_training(p):
    p.add_argument("--epochs", type=int, default=settings.EPOCHS)
    p.add_argument("--batch-size", type=int, default=settings.BATCH_SIZE)
    p.add_argument("--lr", type=float, default=settings.LEARNING_RATE)
    p.add_argument("--delta", type=float, default=settings.L2_DELTA, help="L2 penalty is (2/delta)*sum(theta^2)")
    p.add_argument("--gcn-layers", type=int, default=settings.GCN_LAYERS)
    p.add_argument("--gcn-hidden", type=int, default=settings.GCN_HIDDEN)
    p.add_argument("--embed-dim", type=int, default=settings.GRAPH_EMBED_DIM)
    p.add_argument("--heads", type=int, default=settings.ATTENTION_HEADS)
    p.add_argument("--ffn-hidden", type=int, default=settings.FFN_HIDDEN)
    p.add_argument("--cell-hidden", type=_widths, default=settings.CELL_HIDDEN)
    p.add_argument("--cell-embed-dim", type=int, default=settings.CELL_EMBED_DIM)
    p.add_argument("--head-hidden", type=_widths, default=settings.HEAD_HIDDEN)
    p.add_argument("--dropout", type=float, default=settings.DROPOUT_RATE)
    p.add_argument("--pooling", choices=sorted(POOLINGS), default=settings.GRAPH_POOLING)


def build_parser():
    parser = argparse.ArgumentParser(prog="egtsyn", description="Drug-combination synergy prediction toolkit")
    parser.add_argument("--config", help="flat key=value file merged under explicit flags")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="write dual-graph dumps for every drug")
    p.add_argument("--drugs", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=settings.FEATURIZE_JOBS)
    p.set_defaults(handler=commands.cmd_featurize)

    p = sub.add_parser("split", help="build and audit a split plan")
    _add_data(p)
    _add_split(p)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--out", required=True, help="plan JSON path")
    p.set_defaults(handler=commands.cmd_split)

    p = sub.add_parser("train", help="train one variant on one fold")
    _add_data(p)
    _add_split(p)
    _add_training(p)
    p.add_argument("--variant", choices=VARIANTS, default=settings.MODEL_VARIANT)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--out", default=os.path.join(settings.CHECKPOINT_DIR, "egtsyn.json"), help="checkpoint path")
    p.add_argument("--no-progress", action="store_true", help="disable the epoch progress bar")
    p.set_defaults(handler=commands.cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a fold")
    p.add_argument("--ckpt", required=True)
    _add_data(p)
    _add_split(p)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--report", required=True, help="report JSON path (a .csv twin is written alongside)")
    p.add_argument("--on-train", action="store_true", help="evaluate on the fold's train records")
    p.set_defaults(handler=commands.cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate all four variants on identical folds")
    _add_data(p)
    _add_split(p)
    _add_training(p)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--max-folds", type=int, default=None, help="only run the first N folds")
    p.add_argument("--jobs", type=int, default=settings.FEATURIZE_JOBS)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=commands.cmd_ablate)

    p = sub.add_parser("predict", help="probability for one drug pair on one cell line")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--drug-a", required=True, help="SMILES")
    p.add_argument("--drug-b", required=True, help="SMILES")
    p.add_argument("--cell-id", required=True)
    p.add_argument("--cells", required=True, help="cell-line CSV")
    p.set_defaults(handler=commands.cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="EGTSyn")
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--tolerance", type=float, default=settings.GRADCHECK_TOLERANCE)
    p.add_argument("--max-entries", type=int, default=None, help="sample at most N entries per parameter")
    p.add_argument("--out", default=None, help="manifest path (default: CHECKPOINT_DIR/gradcheck.manifest.json)")
    p.add_argument("--corrupt-rule", default=None, help=argparse.SUPPRESS)
    p.set_defaults(handler=commands.cmd_gradcheck)

    return parser, sub


def read_config_file(path):
    """Flat key=value pairs; keys may use dashes or underscores."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def apply_config_defaults(subparser, values):
    """Converts config strings with each flag's own type and installs them as defaults."""
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"config key '{key}' is not a flag of this subcommand")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        value = raw.split() if action.nargs not in (None, "?") else raw
        if action.type is not None:
            value = [action.type(v) for v in value] if isinstance(value, list) else action.type(value)
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"config value '{raw}' for '{key}' is not one of {list(action.choices)}")
        defaults[key] = value
    subparser.set_defaults(**defaults)


def parse_args(argv=None):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        apply_config_defaults(sub.choices[args.command], read_config_file(args.config))
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    try:
        args = parse_args(argv)
    except (ConfigError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format=settings.LOG_FORMAT)
    try:
        return args.handler(args)
    except NonFiniteLossError as e:
        print(f"[ABORT] {e}", file=sys.stderr)
        return EXIT_NONFINITE
    except (EGTSynError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
