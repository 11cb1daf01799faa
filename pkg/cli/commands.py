"""
Subcommand implementations for main.py.

Each ``cmd_*`` takes the parsed argparse namespace, writes a RunManifest
before any other output, and returns a process exit code.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from analysis.metrics import aggregate_reports, format_mean_sd
from chem.molgraph import graph_dump
from config import settings
from data.graph_cache import GraphCache
from data.labels import label_stats
from data.loader import load_bundle, load_cells, load_drugs, write_rejects
from data.splits import audit_split, make_split
from engine.gradcheck import grad_check
from engine.tensor_core import add, bce_loss, corrupted_rule
from network.checkpoint import load_checkpoint, save_checkpoint
from network.egtsyn import VARIANTS, ModelConfig, build_variant
from utils.errors import ConfigError, DataError
from utils.manifest import RunManifest
from utils.trainer import evaluate, train

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = (("ROC AUC", "roc_auc"), ("PR AUC", "pr_auc"), ("ACC", "acc"),
                    ("BACC", "bacc"), ("KAPPA", "kappa"))

GRADCHECK_SMILES = ("CCO", "c1ccccc1O", "CC(=O)N", "C1CC1C#N", "OC(=O)C=C", "C[NH3+]", "FC(F)Cl")


def _stem(path):
    return os.path.splitext(path)[0]


def _require_files(*paths):
    for path in paths:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"input file not found: {path}")


def _write_manifest(args, subcommand, path, inputs=()):
    manifest = RunManifest.for_run(subcommand, vars(args), getattr(args, "seed", None), inputs)
    return manifest.write(path)


def _banner(title):
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def model_config_from_args(args, cell_input_dim, variant=None):
    return ModelConfig(
        variant=variant or args.variant,
        gcn_layers=args.gcn_layers,
        gcn_hidden=args.gcn_hidden,
        graph_embed_dim=args.embed_dim,
        attention_heads=args.heads,
        ffn_hidden=args.ffn_hidden,
        cell_input_dim=cell_input_dim,
        cell_hidden=args.cell_hidden,
        cell_embed_dim=args.cell_embed_dim,
        head_hidden=args.head_hidden,
        dropout_rate=args.dropout,
        pooling=args.pooling,
        seed=args.seed,
    ).validate()


def _load_plan(args, bundle):
    records = bundle.labeled_records
    plan = make_split(args.split, records, bundle.tissues, k=args.folds, seed=args.seed)
    audit_split(plan, records, bundle.tissues)
    return plan


# ═══════════════════════════════════════════════════════════════════════════
#  featurize
# ═══════════════════════════════════════════════════════════════════════════

def cmd_featurize(args):
    _require_files(args.drugs)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args, "featurize", os.path.join(args.out, "manifest.json"), [args.drugs])
    _banner("FEATURIZE DRUGS")

    drugs, rejects = load_drugs(args.drugs)
    cache = GraphCache(drugs, n_jobs=args.jobs)
    graphs = cache.build_all(list(drugs))

    summary = []
    for dual in graphs:
        with open(os.path.join(args.out, f"{dual.drug_id.replace(os.sep, '_')}.json"), "w") as f:
            json.dump(graph_dump(dual), f, indent=1)
        summary.append((dual.drug_id, dual.n_atoms, dual.n_bonds, dual.atom_bond_graph.N))
    pd.DataFrame(summary, columns=["drug_id", "n_atoms", "n_bonds", "dual_nodes"]).to_csv(
        os.path.join(args.out, "summary.csv"), index=False)
    for row in summary:
        print(",".join(str(v) for v in row))

    print(f"\n[FEATURIZE] {len(graphs)} graph dump(s) written to {args.out}")
    if rejects:
        path = os.path.join(args.out, "rejects.csv")
        pd.DataFrame([(r.key, r.value, r.reason) for r in rejects],
                     columns=["drug_id", "smiles", "error"]).to_csv(path, index=False)
        print(f"[FEATURIZE] {len(rejects)} drug(s) rejected, see {path}")
        return 1
    return 0


# ═══════════════════════════════════════════════════════════════════════════
#  split
# ═══════════════════════════════════════════════════════════════════════════

def cmd_split(args):
    _require_files(*args.data)
    _write_manifest(args, "split", _stem(args.out) + ".manifest.json", args.data)
    bundle = load_bundle(*args.data)
    records = bundle.labeled_records
    plan = make_split(args.split, records, bundle.tissues, k=args.folds, seed=args.seed)
    audit = audit_split(plan, records, bundle.tissues)
    plan.to_json(args.out, audit=audit)

    stats = label_stats(bundle.records)
    print(f"[SPLIT] {stats['positive']} positive / {stats['negative']} negative / "
          f"{stats['excluded']} excluded records")
    for fold in plan.folds:
        print(f"  {fold.name:<24} train={len(fold.train):>6}  test={len(fold.test):>6}")
    print(f"[SPLIT] {plan.protocol} plan with {len(plan)} fold(s) written to {args.out}")
    return 0


# ═══════════════════════════════════════════════════════════════════════════
#  train / evaluate
# ═══════════════════════════════════════════════════════════════════════════

def cmd_train(args):
    _require_files(*args.data)
    _write_manifest(args, "train", _stem(args.out) + ".manifest.json", args.data)
    _banner(f"TRAIN {args.variant}")

    print("[STAGE 1] Loading bundle...")
    bundle = load_bundle(*args.data)
    if bundle.rejects:
        rejects_path = write_rejects(bundle.rejects, _stem(args.out) + ".rejects.csv")
        print(f"  {len(bundle.rejects)} rejected row(s), see {rejects_path}")
    stats = label_stats(bundle.records)
    print(f"  Records: {stats['total']} ({stats['positive']} pos / {stats['negative']} neg / "
          f"{stats['excluded']} excluded)")

    print("[STAGE 2] Building split...")
    plan = _load_plan(args, bundle)
    fold = plan.fold(args.fold)
    print(f"  {plan.protocol} {fold.name}: train={len(fold.train)} test={len(fold.test)}")

    print("[STAGE 3] Training...")
    model = build_variant(model_config_from_args(args, bundle.cell_width))
    print(f"  Model Parameters: {model.param_count():,}")
    result = train(model, bundle, fold, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                   delta=args.delta, seed=args.seed, progress=not args.no_progress)

    save_checkpoint(model, args.out, result.metadata())
    history = result.write_history(_stem(args.out) + ".history.csv")
    print(f"\n[DONE] Checkpoint: {args.out}")
    print(f"       History:    {history}")
    return 0


def _check_dimensions(model, bundle):
    if model.config.cell_input_dim != bundle.cell_width:
        raise ConfigError(
            f"checkpoint expects {model.config.cell_input_dim} expression features per cell line, "
            f"but the cell table has {bundle.cell_width}"
        )


def cmd_evaluate(args):
    _require_files(args.ckpt, *args.data)
    _write_manifest(args, "evaluate", _stem(args.report) + ".manifest.json", [args.ckpt, *args.data])
    model, metadata = load_checkpoint(args.ckpt)
    bundle = load_bundle(*args.data)
    _check_dimensions(model, bundle)

    plan = _load_plan(args, bundle)
    fold = plan.fold(args.fold)
    indices = fold.train if args.on_train else fold.test
    report = evaluate(model, bundle, indices)
    report.to_json(args.report)
    report.to_csv(_stem(args.report) + ".csv")

    print(f"[EVAL] {model.variant} (epoch {metadata.get('epoch')}) on {plan.protocol} {fold.name} "
          f"{'train' if args.on_train else 'test'} set, n={report.n}")
    print(f"  {report.summary_line()}")
    print(f"[EVAL] Report written to {args.report}")
    return 0


# ═══════════════════════════════════════════════════════════════════════════
#  ablate
# ═══════════════════════════════════════════════════════════════════════════

def cmd_ablate(args):
    _require_files(*args.data)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args, "ablate", os.path.join(args.out, "manifest.json"), args.data)
    _banner("ABLATION: EGTSyn / GTSyn / EGSyn / GSyn")

    bundle = load_bundle(*args.data)
    plan = _load_plan(args, bundle)
    plan.to_json(os.path.join(args.out, "split.json"))
    split_digest = plan.digest()
    folds = plan.folds[:args.max_folds] if args.max_folds else plan.folds
    cache = GraphCache(bundle.drugs, n_jobs=args.jobs)

    rows, details = [], {}
    for variant in VARIANTS:
        reports = []
        param_count = None
        for fold in folds:
            model = build_variant(model_config_from_args(args, bundle.cell_width, variant))
            param_count = model.param_count()
            train(model, bundle, fold, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                  delta=args.delta, seed=args.seed, cache=cache, validate=False, progress=False)
            reports.append(evaluate(model, bundle, fold.test, cache=cache))
            print(f"  [{variant}] {fold.name}: {reports[-1].summary_line()}")
        agg = aggregate_reports(reports)
        row = {"variant": variant, "params": param_count}
        row.update({label: format_mean_sd(agg[key]) for label, key in ABLATION_COLUMNS})
        rows.append(row)
        details[variant] = {"params": param_count, "split_digest": split_digest,
                            "fold_names": [f.name for f in folds],
                            "folds": [r.to_dict() for r in reports], "aggregate": agg}

    table = pd.DataFrame(rows, columns=["variant", "params", *(label for label, _ in ABLATION_COLUMNS)])
    table.to_csv(os.path.join(args.out, "ablation.csv"), index=False)
    with open(os.path.join(args.out, "ablation.json"), "w") as f:
        json.dump(details, f, indent=2)

    print()
    print(table.to_string(index=False))
    print(f"\n[ABLATE] Results written to {args.out}")
    return 0


# ═══════════════════════════════════════════════════════════════════════════
#  predict
# ═══════════════════════════════════════════════════════════════════════════

def cmd_predict(args):
    _require_files(args.ckpt, args.cells)
    out_dir = os.path.dirname(os.path.abspath(args.ckpt))
    _write_manifest(args, "predict", os.path.join(out_dir, "predict.manifest.json"), [args.ckpt, args.cells])
    model, _ = load_checkpoint(args.ckpt)
    cells, _, _ = load_cells(args.cells)
    if args.cell_id not in cells:
        raise DataError(f"Unknown cell line id '{args.cell_id}'")
    cell = cells[args.cell_id]
    if cell.size != model.config.cell_input_dim:
        raise ConfigError(
            f"cell line '{args.cell_id}' has {cell.size} features, checkpoint expects "
            f"{model.config.cell_input_dim}"
        )

    cache = GraphCache({})
    drug_a = cache.put("drug_a", args.drug_a)
    drug_b = cache.put("drug_b", args.drug_b)
    prob = model.predict_pair(drug_a, drug_b, cell)
    label = int(prob >= settings.DECISION_THRESHOLD)
    print(f"probability={prob:.8f}")
    print(f"label={label} ({'synergistic' if label else 'not synergistic'})")
    return 0


# ═══════════════════════════════════════════════════════════════════════════
#  gradcheck
# ═══════════════════════════════════════════════════════════════════════════

def tiny_config(variant, seed):
    return ModelConfig(variant=variant, gcn_layers=2, gcn_hidden=6, graph_embed_dim=4, attention_heads=2,
                       ffn_hidden=5, cell_input_dim=7, cell_hidden=(6, 5), cell_embed_dim=4,
                       head_hidden=(6, 5), dropout_rate=0.2, pooling="max", seed=seed)


def gradcheck_closure(model, seed, delta=10.0):
    """Deterministic eval-mode loss over a synthetic pair in both orders."""
    rng = np.random.default_rng(seed)
    first, second = rng.choice(len(GRADCHECK_SMILES), size=2, replace=False)
    cache = GraphCache({"a": GRADCHECK_SMILES[first], "b": GRADCHECK_SMILES[second]})
    a, b = cache.get("a"), cache.get("b")
    cell = rng.normal(size=(1, model.config.cell_input_dim))
    cells = np.vstack([cell, cell])
    labels = np.array([[1.0], [0.0]])

    def closure():
        probs = model.forward([a, b], [b, a], cells, training=False)
        return add(bce_loss(probs, labels), model.regularizer(delta))

    return closure


def run_gradcheck(variant, seed, tolerance, max_entries=None, corrupt_rule=None):
    model = build_variant(tiny_config(variant, seed))
    closure = gradcheck_closure(model, seed)
    if corrupt_rule:
        with corrupted_rule(corrupt_rule):
            return grad_check(closure, model.parameters(), tolerance, max_entries=max_entries, seed=seed)
    return grad_check(closure, model.parameters(), tolerance, max_entries=max_entries, seed=seed)


def cmd_gradcheck(args):
    _write_manifest(args, "gradcheck", args.out or os.path.join(settings.CHECKPOINT_DIR, "gradcheck.manifest.json"))
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    failed = False
    for variant in variants:
        report = run_gradcheck(variant, args.seed, args.tolerance, args.max_entries, args.corrupt_rule)
        name, err = report.worst
        status = "PASS" if report.passed else "FAIL"
        print(f"[GRADCHECK] {variant:<7} {status}  worst={name} rel_err={err:.3e} "
              f"({report.checked_entries} entries, tol={args.tolerance:g})")
        if not report.passed:
            failed = True
            for pname, perr in sorted(report.failures().items(), key=lambda kv: -kv[1])[:10]:
                print(f"    {pname}: {perr:.3e}")
    return 1 if failed else 0

