"""Command-line entry point: ``python -m dfunet <command> ...``.

Exit status is 0 on success, 2 for unreadable or malformed input and 3 when
training hits a non-finite loss. ``DFU_SEED`` overrides the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import metrics, netzoo
from .checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from .features import FeatureConfig, SELECTIONS, extract_features, read_feature_file, write_feature_file
from .optim import NonFiniteLossError, TrainConfig, train
from .pipeline.augment import AUGMENTATIONS, PatchRecord, augment_patch
from .pipeline.dataset import DatasetManifest, FoldPlan, ManifestEntry, make_folds, read_manifest, scan_dataset
from .pipeline.image import ImageBuffer, ImageFormatError, resize_array, save_ppm, to_gray
from .pipeline.normalize import Normalizer, apply_normalizer, fit_normalizer
from .svm import KernelSpec, Standardizer, SvmModel, smo_train, svm_decision

EXIT_INPUT = 2
EXIT_NUMERIC = 3
ARCHS = ["dfunet-base"] + [f"dfunet-v{i}" for i in range(1, 6)] + ["lenet"]


class InputError(Exception):
    """Raised for bad arguments or inconsistent input files."""


def default_seed() -> int:
    raw = os.environ.get("DFU_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"DFU_SEED must be an integer, got {raw!r}") from None


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def source_of(patch_path: str) -> str:
    stem = Path(patch_path).stem
    return stem.split("__", 1)[0]


# -- patch tensors ------------------------------------------------------------

def patch_tensor(img: ImageBuffer, input_shape) -> np.ndarray:
    """Resize a patch to the network input and lay it out as C x H x W floats."""
    c, h, w = input_shape
    if c == 1:
        arr = to_gray(img)[:, :, None]
    elif img.channels == c:
        arr = img.pixels.astype(np.float64)
    else:
        raise InputError(f"patch has {img.channels} channels, network expects {c}")
    if arr.shape[:2] != (h, w):
        arr = resize_array(arr, h, w)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_split(manifest: DatasetManifest, plan: FoldPlan, fold: int, part: str) -> List[ManifestEntry]:
    try:
        ids = plan.fold(fold)[part]
    except IndexError as exc:
        raise InputError(str(exc)) from None
    return manifest.select(ids)


def _stack(manifest: DatasetManifest, entries, input_shape):
    X = np.stack([patch_tensor(manifest.load_image(e), input_shape) for e in entries])
    y = np.array([e.label for e in entries], dtype=np.int64)
    return X, y


# -- commands -----------------------------------------------------------------

def cmd_manifest(args) -> int:
    man = scan_dataset(args.root, args.classes.split(",") if args.classes else None)
    man.write_csv(args.out)
    print(f"{len(man)} patches, {len(man.source_ids())} sources, classes {man.class_names}")
    return 0


def cmd_make_folds(args) -> int:
    plan = make_folds(read_manifest(args.manifest), k=args.k, holdout=args.holdout,
                      seed=args.seed, per_patch=args.per_patch)
    plan.save(args.out)
    print(f"{len(plan.folds)} fold(s) written to {args.out}")
    return 0


def cmd_augment(args) -> int:
    src = Path(getattr(args, "in"))
    out = Path(args.out)
    man = scan_dataset(src)
    if not len(man):
        raise InputError(f"no .ppm patches under {src}")
    entries = []
    for e in man.entries:
        rec = PatchRecord(man.load_image(e), e.label, e.source_id, "original", e.patch_id)
        for kind, aug in zip(AUGMENTATIONS, augment_patch(rec, args.seed)):
            rel = f"{man.class_names[e.label]}/{e.source_id}__{e.patch_id}-{kind}.ppm"
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            save_ppm(out / rel, aug.image)
            entries.append(ManifestEntry(rel, e.label, e.source_id))
    DatasetManifest(entries, man.class_names, out).write_csv(out / "manifest.csv")
    print(f"originals {len(man)}  outputs {len(entries)}")
    return 0


def cmd_features(args) -> int:
    man = read_manifest(args.manifest)
    cfg = FeatureConfig()
    rows, layout = [], None
    for e in man.entries:
        vec = extract_features(man.load_image(e), args.which, cfg)
        rows.append(vec.values)
        layout = vec.layout
    if not rows:
        raise InputError("manifest lists no patches")
    write_feature_file(args.out, [e.path for e in man.entries], [e.label for e in man.entries],
                       np.vstack(rows), cfg, layout, args.which)
    print(f"{len(rows)} rows x {len(rows[0])} features")
    return 0


def _read_sidecar(path) -> dict:
    side = Path(f"{path}.json")
    return json.loads(side.read_text()) if side.exists() else {}


def cmd_svm_train(args) -> int:
    ids, labels, X = read_feature_file(args.features)
    if args.folds is not None:
        plan = FoldPlan.load(args.folds)
        try:
            wanted = set(plan.fold(args.fold)["train"])
        except IndexError as exc:
            raise InputError(str(exc)) from None
        keep = [i for i, ident in enumerate(ids) if source_of(ident) in wanted or ident in wanted]
        X, labels = X[keep], labels[keep]
    if len(np.unique(labels)) < 2:
        raise InputError("svm-train needs both classes in the training rows")
    scaler = Standardizer.fit(X) if args.standardize else None
    Xs = scaler.transform(X) if scaler is not None else X
    y = np.where(labels == 1, 1.0, -1.0)
    model = smo_train(Xs, y, C=args.C, kernel=KernelSpec(args.kernel, args.gamma), tol=args.tol,
                      max_passes=args.max_passes)
    model.scaler = scaler
    model.meta["which"] = _read_sidecar(args.features).get("which")
    model.save(args.out)
    print(f"{len(model.dual_coef)} support vectors, b = {model.bias:.6g}")
    return 0


def cmd_train(args) -> int:
    man = read_manifest(args.manifest)
    plan = FoldPlan.load(args.folds)
    classes = max(len(man.class_names), 2)
    if args.arch == "lenet":
        spec = netzoo.build_lenet(classes)
    else:
        spec = netzoo.build_architecture(args.arch, (3, args.input_size, args.input_size), classes,
                                         fc_units=args.fc_units, head_pool=args.head_pool)
    config = TrainConfig.for_arch(args.arch, epochs=args.epochs, batch_size=args.batch_size,
                                  base_lr=args.lr, gamma=args.gamma, step_fraction=args.step,
                                  seed=args.seed)
    _say("train defaults: " + json.dumps(asdict(config), sort_keys=True))
    train_entries = load_split(man, plan, args.fold, "train")
    val_entries = load_split(man, plan, args.fold, "val")
    if not train_entries:
        raise InputError(f"fold {args.fold} has an empty training split")
    X, y = _stack(man, train_entries, spec.input_shape)
    if config.batch_size > len(X):
        config.batch_size = len(X)
    norm = fit_normalizer(X)
    Xn = apply_normalizer(norm, X)
    Xv = yv = None
    if val_entries:
        Xv, yv = _stack(man, val_entries, spec.input_shape)
        Xv = apply_normalizer(norm, Xv)
    history = []

    def report(record, params):
        row = {"epoch": record.epoch, "loss": record.loss, "train_accuracy": record.train_accuracy}
        if Xv is not None:
            probs = netzoo.predict_proba(spec, params, Xv)
            row["val_accuracy"] = float((probs.argmax(axis=1) == yv).mean())
        history.append(row)
        _say(json.dumps(row))

    params, log, state = train(spec, netzoo.init_params(spec, args.seed), Xn, y, config, on_epoch=report)
    meta = {"arch": args.arch, "class_names": man.class_names, "fold": args.fold, "seed": args.seed,
            "train_config": asdict(config), "history": history}
    save_checkpoint(args.out, spec, params, state,
                    extras={"normalizer.mean": norm.mean, "normalizer.std": norm.std}, meta=meta)
    if args.log:
        Path(args.log).write_text(log.to_csv())
    print(f"trained {len(log.records)} epoch(s) on {len(X)} patches; checkpoint {args.out}")
    return 0


def _score_entries(model_path, man: DatasetManifest, entries):
    """Positive-class scores and decision threshold for a checkpoint or SVM model."""
    with open(model_path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        ckpt = load_checkpoint(model_path)
        X, _ = _stack(man, entries, ckpt.spec.input_shape)
        if "normalizer.mean" in ckpt.extras:
            norm = Normalizer(ckpt.extras["normalizer.mean"], ckpt.extras["normalizer.std"])
            X = apply_normalizer(norm, X)
        probs = netzoo.predict_proba(ckpt.spec, ckpt.params, X)
        return probs[:, 1], 0.5, probs
    model = SvmModel.load(model_path)
    which = model.meta.get("which") or "lbp+hog+color"
    rows = np.vstack([extract_features(man.load_image(e), which).values for e in entries])
    return svm_decision(model, rows), 0.0, None


def cmd_eval(args) -> int:
    man = read_manifest(args.manifest)
    plan = FoldPlan.load(args.folds)
    entries = load_split(man, plan, args.fold, "test")
    if not entries:
        raise InputError(f"fold {args.fold} has an empty test split")
    scores, threshold, probs = _score_entries(args.model, man, entries)
    labels = np.array([e.label for e in entries])
    binary = np.where(labels == 1, 1, 0)
    if args.scores:
        metrics.write_scores(args.scores, [e.path for e in entries], binary, scores)
    result = metrics.evaluate_scores(binary, scores, threshold=threshold)
    if probs is not None and probs.shape[1] > 2:
        cm = metrics.confusion_matrix(labels, probs.argmax(axis=1), probs.shape[1])
        result["multiclass"] = metrics.multiclass_report(cm)
    text = json.dumps(result, indent=1)
    Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    curves, rows = {}, []
    for path in args.scores.split(","):
        _, labels, scores = metrics.read_scores(path)
        name = Path(path).stem
        curves[name] = metrics.roc_curve(labels, scores)
        rep = metrics.auc(labels, scores)
        rows.append((name, rep.auc, rep.se, rep.ci95[0], rep.ci95[1]))
    Path(args.out).write_text(metrics.roc_svg(curves))
    if args.table:
        with open(args.table, "w") as fh:
            fh.write("model,auc,se,ci_low,ci_high\n")
            for name, a, se, lo, hi in rows:
                fh.write(f"{name},{a!r},{se!r},{lo!r},{hi!r}\n")
    for name, a, se, lo, hi in rows:
        print(f"{name}: auc {a:.4f}  se {se:.4f}  95% CI {lo:.4f}-{hi:.4f}")
    return 0


# -- argument parsing ---------------------------------------------------------

def build_parser(seed: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfunet", description="Foot-ulcer patch classification tools")
    sub = p.add_subparsers(dest="command", required=True)

    def with_seed(sp):
        sp.add_argument("--seed", type=int, default=seed)
        return sp

    sp = sub.add_parser("manifest", help="write a manifest CSV for a dataset directory")
    sp.add_argument("--root", required=True)
    sp.add_argument("--classes", help="comma-separated class order (default: sorted folder names)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_manifest)

    sp = with_seed(sub.add_parser("make-folds", help="assign sources to train/val/test"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--holdout", choices=["kfold", "split-85-5-10"], default="kfold")
    sp.add_argument("--per-patch", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_make_folds)

    sp = with_seed(sub.add_parser("augment", help="write 15 augmented copies of every patch"))
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("features", help="extract hand-crafted descriptors")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--which", choices=SELECTIONS, default="lbp+hog+color")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("svm-train", help="train an SMO support vector machine")
    sp.add_argument("--features", required=True)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--kernel", choices=["linear", "rbf"], default="linear")
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--max-passes", type=int, default=100)
    sp.add_argument("--no-standardize", dest="standardize", action="store_false")
    sp.add_argument("--folds")
    sp.add_argument("--fold", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_svm_train)

    sp = with_seed(sub.add_parser("train", help="train a network on one fold"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--arch", choices=ARCHS, default="dfunet-base")
    sp.add_argument("--folds", required=True)
    sp.add_argument("--fold", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--step", type=float, help="fraction of total iterations per learning-rate step")
    sp.add_argument("--input-size", type=int, default=224)
    sp.add_argument("--fc-units", type=int, default=100)
    sp.add_argument("--head-pool", choices=["average", "max"], default="average")
    sp.add_argument("--log", help="write the per-epoch training log CSV here")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a fold's test split")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--folds", required=True)
    sp.add_argument("--fold", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--scores")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="ROC plot and AUC table for one or more scores files")
    sp.add_argument("--scores", required=True, help="comma-separated scores CSVs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--table")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        seed = default_seed()
    except InputError as exc:
        _say(f"error: {exc}")
        return EXIT_INPUT
    args = build_parser(seed).parse_args(argv)
    if hasattr(args, "seed"):
        _say(f"seed {args.seed}")
    try:
        return args.func(args)
    except (NonFiniteLossError, FloatingPointError) as exc:
        _say(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (InputError, ImageFormatError, CheckpointError, ValueError, KeyError, OSError) as exc:
        _say(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
