"""Subcommands. Each module-level ``setup_*`` registers one subparser."""
import json
import logging
from pathlib import Path

import numpy as np

from .augment import preview
from .config import env_seed, load_config, serialize_config, with_overrides
from .dataset import load_manifest
from .episodes import CLASSIFIERS, LabeledPool, run_protocol
from .exceptions import DataError
from .formats import (
    load_ppm_pgm,
    read_labels,
    read_tensor,
    write_labels,
    write_ppm_pgm,
    write_tensor,
)
from .pca import explained_variance_ratio, load_pca, pca_fit, pca_transform, save_pca
from .render import render
from .rng import RngKey
from .synthetic import SyntheticSpec, write_synthetic
from .training import embed, load_pretrained, pretrain, save_pretrained

LOG = logging.getLogger(__name__)


def resolve_config(args, base=None, **overrides):
    """Config from ``--config``, ``EPISODICA_SEED`` and flags, printed before use.

    Without ``--config`` a ``base`` config (the one stored with a checkpoint)
    replaces the defaults.
    """
    if base is not None and args.config is None:
        seed = args.seed if args.seed is not None else env_seed()
        cfg = with_overrides(base, seed=seed, **overrides)
    else:
        cfg = load_config(args.config, seed=args.seed, **overrides)
    print("# resolved configuration")
    print(serialize_config(cfg), end="")
    return cfg


def cmd_synth(args):
    cfg = resolve_config(args)
    spec = SyntheticSpec(
        n_classes=args.classes,
        per_class=args.per_class,
        image_size=args.image_size,
        noise=args.noise,
        seed=cfg.train.seed,
        n_test_classes=args.test_classes,
        n_val_classes=args.val_classes,
    )
    manifest = write_synthetic(spec, args.out)
    print(f"wrote {len(manifest.entries)} images to {args.out}")


def setup_synth(subparsers, parents):
    parser = subparsers.add_parser(
        "synth", description="Generate class-coded grating images.", parents=parents
    )
    parser.set_defaults(command=cmd_synth)
    parser.add_argument("--out", type=Path, required=True, help="Output dataset folder.")
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--per-class", type=int, default=120)
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--test-classes", type=int, default=5)
    parser.add_argument("--val-classes", type=int, default=0)
    return parser


def cmd_pretrain(args):
    cfg = resolve_config(
        args,
        epochs=args.epochs,
        batch_size=args.batch_size,
        variant=args.variant,
        workers=args.workers,
    )
    images, _ = load_manifest(args.data).load_split(args.split)
    result = pretrain(images, cfg)
    save_pretrained(result, cfg, args.out)
    if result.history:
        print(f"final epoch mean loss {result.history[-1]:.6f}")


def setup_pretrain(subparsers, parents):
    parser = subparsers.add_parser(
        "pretrain", description="Contrastive pretraining of an encoder.", parents=parents
    )
    parser.set_defaults(command=cmd_pretrain)
    parser.add_argument("--data", type=Path, required=True, help="Dataset manifest CSV.")
    parser.add_argument("--split", default="train")
    parser.add_argument("--out", type=Path, required=True, help="Checkpoint folder.")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--variant", choices=("simclr", "moco"))
    parser.add_argument("--workers", type=int)
    return parser


def cmd_embed(args):
    result, trained_cfg = load_pretrained(args.checkpoint)
    cfg = resolve_config(args, base=trained_cfg)
    images, labels = load_manifest(args.data).load_split(args.split)
    features = embed(result.encoder, images, cfg)
    write_tensor(args.embeddings, features)
    write_labels(args.labels, labels)
    print(f"embedded {features.shape[0]} images into {features.shape[1]} dimensions")


def setup_embed(subparsers, parents):
    parser = subparsers.add_parser(
        "embed", description="Embed a dataset split with a trained encoder.", parents=parents
    )
    parser.set_defaults(command=cmd_embed)
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True, help="Dataset manifest CSV.")
    parser.add_argument("--split", default="test")
    parser.add_argument("--embeddings", type=Path, required=True, help="Output ETEN1 file.")
    parser.add_argument("--labels", type=Path, required=True, help="Output label CSV.")
    return parser


def load_pool(embeddings, labels) -> LabeledPool:
    features = read_tensor(embeddings).data
    classes = read_labels(labels)
    if features.ndim != 2 or len(classes) != features.shape[0]:
        raise DataError(
            f"{embeddings} holds {features.shape} features but {labels} has {len(classes)} rows"
        )
    return LabeledPool(features, classes)


def cmd_eval(args):
    cfg = resolve_config(
        args,
        n_way=args.n_way,
        k_shot=args.k_shot,
        n_query=args.n_query,
        n_tasks=args.n_tasks,
    )
    pool = load_pool(args.embeddings, args.labels)
    if args.pca is not None:
        model = load_pca(args.pca)
        pool = LabeledPool(pca_transform(model, pool.features), pool.labels)
    report = run_protocol(
        pool,
        cfg.task,
        args.classifier,
        cfg.train.seed,
        normalize=args.normalize,
        workers=args.workers,
    )
    document = report.to_json(per_task=args.per_task)
    print(
        render(
            "summary.txt",
            spec=report.spec,
            classifier=report.classifier,
            mean=report.mean,
            ci95=report.ci95_halfwidth,
            n_tasks=report.n_tasks,
            seed=report.seed,
        ),
        end="",
    )
    text = json.dumps(document, sort_keys=True)
    if args.report is not None:
        LOG.debug("Writing report '%s'", args.report)
        args.report.write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def setup_eval(subparsers, parents):
    parser = subparsers.add_parser(
        "eval", description="Episodic N-way K-shot evaluation.", parents=parents
    )
    parser.set_defaults(command=cmd_eval)
    parser.add_argument("--embeddings", type=Path, required=True)
    parser.add_argument("--labels", type=Path, required=True)
    parser.add_argument("--n-way", type=int)
    parser.add_argument("--k-shot", type=int)
    parser.add_argument("--n-query", type=int)
    parser.add_argument("--n-tasks", type=int)
    parser.add_argument("--classifier", choices=tuple(CLASSIFIERS), default="attn")
    parser.add_argument("--normalize", action="store_true", help="L2-normalize features.")
    parser.add_argument("--pca", type=Path, help="Reduce features with a fitted PCA model.")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--report", type=Path, help="Write the JSON report here.")
    parser.add_argument("--per-task", action="store_true", help="Include per-task accuracies.")
    return parser


def cmd_pca_fit(args):
    resolve_config(args)
    model = pca_fit(read_tensor(args.embeddings).data, args.dim)
    save_pca(model, args.out)
    kept = float(np.sum(explained_variance_ratio(model)))
    print(
        f"kept {model.out_dim} of {model.in_dim} dimensions "
        f"({100 * kept:.2f}% of the variance)"
    )


def cmd_pca_transform(args):
    resolve_config(args)
    model = load_pca(args.model)
    reduced = pca_transform(model, read_tensor(args.embeddings).data)
    write_tensor(args.out, reduced)
    print(f"wrote {reduced.shape[0]} x {reduced.shape[1]} features to {args.out}")


def setup_pca(subparsers, parents):
    parser = subparsers.add_parser("pca", description="Fit or apply PCA to embeddings.")
    actions = parser.add_subparsers(dest="pca_action", required=True)
    fit = actions.add_parser("fit", parents=parents, help="Fit on training embeddings.")
    fit.set_defaults(command=cmd_pca_fit)
    fit.add_argument("--embeddings", type=Path, required=True)
    fit.add_argument("--dim", type=int, required=True)
    fit.add_argument("--out", type=Path, required=True, help="Model folder.")
    apply = actions.add_parser("transform", parents=parents, help="Apply a fitted model.")
    apply.set_defaults(command=cmd_pca_transform)
    apply.add_argument("--model", type=Path, required=True)
    apply.add_argument("--embeddings", type=Path, required=True)
    apply.add_argument("--out", type=Path, required=True)
    return parser


def cmd_augment_preview(args):
    cfg = resolve_config(args)
    image = load_ppm_pgm(args.image)
    args.out.mkdir(parents=True, exist_ok=True)
    views = preview(image, cfg.augment, RngKey(cfg.train.seed), args.count)
    for index, view in enumerate(views):
        write_ppm_pgm(args.out / f"view{index:02d}.ppm", view)
    print(f"wrote {len(views)} views to {args.out}")


def setup_augment_preview(subparsers, parents):
    parser = subparsers.add_parser(
        "augment-preview", description="Write augmented views of one image.", parents=parents
    )
    parser.set_defaults(command=cmd_augment_preview)
    parser.add_argument("--image", type=Path, required=True, help="PPM or PGM input.")
    parser.add_argument("--count", type=int, default=8)
    parser.add_argument("--out", type=Path, required=True)
    return parser


SUBCOMMANDS = (
    setup_synth,
    setup_pretrain,
    setup_embed,
    setup_eval,
    setup_pca,
    setup_augment_preview,
)
