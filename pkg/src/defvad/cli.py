"""Single entry point exposing the pipeline as subcommands."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .core import (
    AnomalyDefinition,
    Config,
    DefVadError,
    NotFoundError,
    ValidationError,
    config_to_json,
    definition_from_classes,
    validate_config,
)
from .data import (
    FeatureRepository,
    KnnIndex,
    SyntheticSpec,
    build_knn_index,
    generate_synthetic_dataset,
    load_manifest,
    load_prototypes,
)
from .evaluate import (
    ManifestEval,
    evaluate_protocol1,
    evaluate_protocol2,
    load_subsets,
)
from .model import TextEncoder, load_checkpoint, score_sequence
from .train import fit, taxonomy_classes

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config", "model and training configuration")
    for f in dataclasses.fields(Config):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            group.add_argument(
                flag, dest=f.name, default=f.default,
                action=argparse.BooleanOptionalAction,
                help=f"config field {f.name} (default {f.default})",
            )
        else:
            kind = type(f.default)
            group.add_argument(
                flag, dest=f.name, type=kind, default=f.default,
                help=f"config field {f.name} (default {f.default})",
            )


def _config_from_args(args: argparse.Namespace) -> Config:
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(Config)}
    return validate_config(Config(**values))


def _echo_config(cfg: Config) -> None:
    print(f"config: {config_to_json(cfg)}", file=sys.stderr)


def _load_definition(path) -> AnomalyDefinition:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"definition file {path} does not exist")
    return AnomalyDefinition.from_dict(json.loads(path.read_text()))


def _open_dataset(data_dir):
    data_dir = Path(data_dir)
    records = load_manifest(data_dir / "manifest.jsonl")
    repo = FeatureRepository(data_dir)
    prototypes = {}
    proto_path = data_dir / "prototypes.json"
    if proto_path.exists():
        prototypes = load_prototypes(proto_path)
    if repo.embedding_width is None:
        ids = repo.video_ids()
        if ids:
            repo.read(ids[0])
    return records, repo, prototypes


def cmd_synth(args) -> int:
    if not 0.0 < args.frac_min <= args.frac_max < 1.0:
        raise ValidationError(
            "--frac-min/--frac-max must satisfy 0 < min <= max < 1, got "
            f"{args.frac_min}/{args.frac_max}"
        )
    spec = SyntheticSpec(
        num_categories=args.categories,
        videos_per_split={"train": args.train, "val": args.val, "test": args.test},
        embedding_width=args.embed_width,
        length_range=(args.length_min, args.length_max),
        anomaly_fraction_range=(args.frac_min, args.frac_max),
        noise_scale=args.noise,
        seed=args.seed,
        stride_frames=args.stride,
        fps=args.fps,
    )
    print(f"spec: {json.dumps(dataclasses.asdict(spec))}", file=sys.stderr)
    records, _, _ = generate_synthetic_dataset(spec, args.out)
    print(
        json.dumps(
            {
                "out": str(args.out),
                "videos": len(records),
                "splits": {
                    s: sum(1 for r in records if r.split == s)
                    for s in ("train", "val", "test")
                },
            }
        )
    )
    return EXIT_OK


def cmd_knn(args) -> int:
    print(f"knn: {json.dumps({'data': str(args.data), 'n': args.n})}", file=sys.stderr)
    records, repo, _ = _open_dataset(args.data)
    index = build_knn_index(repo, records, args.n)
    out = Path(args.out) if args.out else Path(args.data) / "knn.json"
    index.save(out)
    print(json.dumps({"out": str(out), "videos": len(index.neighbors)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    _echo_config(cfg)
    records, repo, prototypes = _open_dataset(args.data)
    knn_path = Path(args.knn) if args.knn else Path(args.data) / "knn.json"
    if knn_path.exists():
        knn = KnnIndex.load(knn_path)
    else:
        knn = build_knn_index(repo, records, cfg.knn_n)
    text_encoder = TextEncoder(repo.embedding_width, prototypes)
    result = fit(records, repo, knn, cfg, text_encoder, out_dir=Path(args.out))
    (Path(args.out) / "config.json").write_text(config_to_json(cfg))
    print(
        json.dumps(
            {
                "checkpoint": str(result.checkpoint_path),
                "steps": sum(1 for l in result.log_lines if "step" in l),
                "best_val_auc": result.best_val_auc,
            }
        )
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    _echo_config(cfg)
    records, repo, prototypes = _open_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    text_encoder = TextEncoder(model.embed_width, prototypes)
    eval_records = [r for r in records if r.split == args.split]
    if not eval_records:
        raise ValidationError(f"split {args.split!r} is empty")
    if args.protocol == 1:
        if args.definition:
            definition = _load_definition(args.definition)
        else:
            definition = definition_from_classes(taxonomy_classes(records))
        manifest = ManifestEval(
            name=Path(args.data).name,
            records=tuple(eval_records),
            repo=repo,
            definition=definition,
            metric=args.metric,
        )
        report = evaluate_protocol1(model, text_encoder, [manifest], cfg)
    else:
        if not args.subsets:
            raise ValidationError("--subsets is required for protocol 2")
        subsets = load_subsets(args.subsets)
        report = evaluate_protocol2(
            model, text_encoder, repo, eval_records, subsets, cfg
        )
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _config_from_args(args)
    _echo_config(cfg)
    records, repo, prototypes = _open_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    text_encoder = TextEncoder(model.embed_width, prototypes)
    if args.video not in repo:
        raise NotFoundError(f"video {args.video!r} not in the repository")
    definition = _load_definition(args.definition)
    seq = repo.read(args.video)
    result = score_sequence(model, text_encoder, seq, definition)
    line = json.dumps(
        {
            "video_id": result.video_id,
            "frame_scores": [float(x) for x in result.frame_scores],
            "class_probs": [float(x) for x in result.video_class_probs],
            "definition_name": Path(args.definition).stem,
        }
    )
    if args.out:
        Path(args.out).write_text(line + "\n")
    print(line)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _config_from_args(args)
    _echo_config(cfg)
    app = create_app(args.checkpoint, args.data, split=args.split)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defvad",
        description="Definition-conditioned video anomaly detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=5)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--embed-width", type=int, default=32)
    p.add_argument("--length-min", type=int, default=20)
    p.add_argument("--length-max", type=int, default=60)
    p.add_argument("--frac-min", type=float, default=0.2)
    p.add_argument("--frac-max", type=float, default=0.6)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--fps", type=float, default=24.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("knn", help="precompute nearest normal neighbors")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=Config().knn_n)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("train", help="train a detector on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--knn", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", type=int, choices=(1, 2), required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--metric", choices=("auc", "ap"), default="auc")
    p.add_argument("--definition", default=None)
    p.add_argument("--subsets", default=None)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score one video under a definition")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--definition", required=True)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("serve", help="start the scoring service")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--split", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, NotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DefVadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
