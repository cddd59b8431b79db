"""Command-line pipeline: synth, preprocess, train, eval.

Exit codes: 0 success, 2 config/input error, 3 runtime numerical error.
Commands lock their output directory while running and refuse to overwrite
existing outputs unless --force is given. FACEGCN_THREADS caps worker
parallelism during preprocessing (0 or unset = single-threaded).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import dataset_synth, landmark_engine, mesh_core, patch_features, st_graph, stgcn_net
from .config import RunConfig, load_config, serialize_config
from .errors import (
    ArchitectureMismatch,
    ConfigError,
    EmptySide,
    FaceGcnError,
    NumericalError,
)

log = logging.getLogger("facegcn")

LOCK_NAME = ".facegcn.lock"


@contextmanager
def _output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{lock} exists: another command is writing to this directory")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _thread_count() -> int:
    try:
        return max(0, int(os.environ.get("FACEGCN_THREADS", "0")))
    except ValueError:
        return 0


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; rerun with --force to overwrite")


def _build_spatial(cfg: RunConfig, landmarks):
    graph = st_graph.build_spatial_edges(
        landmarks,
        strategy=cfg.graph.strategy,
        knn_m=cfg.graph.knn_m,
        template_pairs=cfg.graph.template_pairs,
    )
    labels = st_graph.partition(graph, cfg.graph.partition)
    return graph, labels


# ---------------------------------------------------------------------------
# synth


def cmd_synth(cfg: RunConfig, force: bool) -> int:
    out = cfg.output_dir
    with _output_lock(out):
        _refuse_existing(cfg.manifest_path, force)
        s = cfg.synth
        synth_cfg = dataset_synth.SynthConfig(
            n_identities=s.n_identities,
            emotions=s.emotions,
            T=s.frames,
            k=cfg.features.k,
            grid=s.grid,
            lm_grid=s.landmark_grid,
            identity_amplitude=s.identity_amplitude,
            expression_amplitude=s.expression_amplitude,
            seed=cfg.seed,
        )
        log.info("generating %d x %d synthetic sequences", s.n_identities, len(s.emotions))
        result = dataset_synth.build_dataset(
            synth_cfg, scale_normalize=cfg.features.scale_normalize
        )

        entries = []
        for sample in result.samples:
            name = f"id{sample.identity:03d}_emo{sample.emotion}.fgt"
            patch_features.save_tensor(sample.tensor, out / name)
            entries.append(
                {
                    "sequence": name.removesuffix(".fgt"),
                    "identity": sample.identity,
                    "emotion": sample.emotion,
                    "tensor": name,
                    "provenance": sample.provenance,
                }
            )

        graph, labels = _build_spatial(cfg, result.landmarks)
        st_graph.save_graph(graph, labels, out / "graph.fgg")
        manifest = {
            "kind": "facegcn-manifest",
            "k": cfg.features.k,
            "J": len(result.landmarks),
            "graph": "graph.fgg",
            "separability": {
                "inter_identity": result.inter_identity_distance,
                "intra_identity": result.intra_identity_distance,
            },
            "samples": entries,
        }
        cfg.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("wrote %d tensors and %s", len(entries), cfg.manifest_path)
    return 0


# ---------------------------------------------------------------------------
# preprocess


def _sequence_frames(seq_dir: Path, cfg: RunConfig):
    mesh_files = sorted(
        p for p in seq_dir.iterdir() if p.suffix in (".ply", ".obj") and p.stem.startswith("frame_")
    )
    if not mesh_files:
        raise ConfigError(f"{seq_dir}: no frame_*.ply or frame_*.obj files")
    ext = "." + cfg.features.landmark_source
    frames = []
    for mesh_path in mesh_files:
        lm_path = mesh_path.with_suffix(ext)
        if not lm_path.exists():
            raise ConfigError(f"missing landmark file for frame {mesh_path.name}: {lm_path}")
        mesh = mesh_core.load_mesh(mesh_path)
        if cfg.features.landmark_source == "lm2":
            points = landmark_engine.load_landmarks_2d(lm_path)
            base = landmark_engine.lift_landmarks(mesh, points)
        else:
            points = landmark_engine.load_landmarks_3d(lm_path)
            base = landmark_engine.snap_to_mesh(mesh, points)
        graph = mesh_core.build_edge_graph(mesh)
        result = landmark_engine.augment_landmarks(
            mesh, graph, base, cfg.features.augmentation_pairs
        )
        if result.skipped:
            log.warning("%s: skipped unreachable pairs %s", mesh_path.name, result.skipped)
        frames.append((mesh, result.landmarks))
    return frames


def _preprocess_sequence(seq_dir: Path, cfg: RunConfig, out: Path):
    frames = _sequence_frames(seq_dir, cfg)
    tensor = patch_features.build_sequence_tensor(
        frames, cfg.features.k, scale_normalize=cfg.features.scale_normalize
    )
    name = seq_dir.name + ".fgt"
    patch_features.save_tensor(tensor, out / name)
    return name, tensor, frames[0][1]


def cmd_preprocess(cfg: RunConfig, force: bool) -> int:
    if not cfg.paths.input_dir:
        raise ConfigError("paths.input_dir is required for preprocess")
    input_dir = Path(cfg.paths.input_dir)
    if not input_dir.is_dir():
        raise ConfigError(f"input directory not found: {input_dir}")
    seq_dirs = sorted(p for p in input_dir.iterdir() if p.is_dir())
    if not seq_dirs:
        raise ConfigError(f"{input_dir} contains no sequence directories")

    labels_path = Path(cfg.paths.labels_file) if cfg.paths.labels_file else input_dir / "labels.json"
    if not labels_path.exists():
        raise ConfigError(f"label mapping file not found: {labels_path}")
    labels = json.loads(labels_path.read_text())

    out = cfg.output_dir
    with _output_lock(out):
        _refuse_existing(cfg.manifest_path, force)
        written: list[Path] = []
        try:
            threads = _thread_count()
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    results = list(pool.map(lambda d: _preprocess_sequence(d, cfg, out), seq_dirs))
            else:
                results = [_preprocess_sequence(d, cfg, out) for d in seq_dirs]
            entries = []
            first_landmarks = None
            for seq_dir, (name, tensor, landmarks) in zip(seq_dirs, results):
                written.append(out / name)
                if first_landmarks is None:
                    first_landmarks = landmarks
                seq_labels = labels.get(seq_dir.name)
                if seq_labels is None:
                    raise ConfigError(f"{labels_path} has no entry for sequence {seq_dir.name!r}")
                entries.append(
                    {
                        "sequence": seq_dir.name,
                        "identity": int(seq_labels["identity"]),
                        "emotion": int(seq_labels["emotion"]),
                        "tensor": name,
                        "provenance": {"k": cfg.features.k, "J": tensor.J, "T": tensor.T},
                    }
                )
            graph, part = _build_spatial(cfg, first_landmarks)
            st_graph.save_graph(graph, part, out / "graph.fgg")
            written.append(out / "graph.fgg")
            manifest = {
                "kind": "facegcn-manifest",
                "k": cfg.features.k,
                "J": len(first_landmarks),
                "graph": "graph.fgg",
                "samples": entries,
            }
            cfg.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        except BaseException:
            for p in written:  # no partial outputs on failure
                p.unlink(missing_ok=True)
            raise
        log.info("preprocessed %d sequences into %s", len(seq_dirs), out)
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _load_manifest(cfg: RunConfig):
    path = cfg.manifest_path
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("kind") != "facegcn-manifest" or not manifest.get("samples"):
        raise ConfigError(f"{path}: not a usable manifest")
    root = path.parent
    samples = []
    for entry in manifest["samples"]:
        tensor = patch_features.load_tensor(root / entry["tensor"])
        samples.append(
            dataset_synth.SequenceSample(
                tensor=tensor,
                identity=int(entry["identity"]),
                emotion=int(entry["emotion"]),
                provenance=entry.get("provenance", {}),
            )
        )
    graph, labels = st_graph.load_graph(root / manifest["graph"])
    return manifest, samples, graph, labels


def _class_mapping(samples) -> dict[int, int]:
    return {ident: i for i, ident in enumerate(sorted({s.identity for s in samples}))}


def _model_arch(cfg: RunConfig, in_channels: int, num_classes: int) -> stgcn_net.ModelArch:
    return stgcn_net.ModelArch(
        in_channels=in_channels,
        block_channels=cfg.model.block_channels,
        strides=cfg.model.strides,
        kernel_size=cfg.model.kernel_size,
        num_classes=num_classes,
        graph_conv_bias=cfg.model.graph_conv_bias,
        residual=cfg.model.residual,
    )


def cmd_train(cfg: RunConfig, force: bool) -> int:
    manifest, samples, graph, labels = _load_manifest(cfg)
    train_side, _ = dataset_synth.cross_emotion_split(samples, cfg.train.train_emotions)
    classes = _class_mapping(samples)
    norm = st_graph.normalize_adjacency(graph, labels)

    in_channels = samples[0].tensor.C
    model = stgcn_net.init_model(
        _model_arch(cfg, in_channels, len(classes)), norm, seed=cfg.seed
    )
    train_data = [(s.tensor.values, classes[s.identity]) for s in train_side]

    out = cfg.output_dir
    with _output_lock(out):
        log_path = out / "train_log.txt"
        best_path = out / "checkpoint_best.fgc"
        _refuse_existing(cfg.checkpoint_path, force)
        _refuse_existing(log_path, force)
        meta = {"k": manifest["k"], "seed": cfg.seed, "epoch": 0}

        best_loss = np.inf
        lines: list[str] = []

        def on_epoch(stats: stgcn_net.EpochStats):
            nonlocal best_loss
            lines.append(stats.log_line())
            log.info("%s", stats.log_line())
            if stats.loss < best_loss:
                best_loss = stats.loss
                stgcn_net.save_checkpoint(best_path, model, {**meta, "epoch": stats.epoch})

        stgcn_net.train_model(
            model,
            train_data,
            epochs=cfg.train.epochs,
            base_lr=cfg.optim.base_lr,
            momentum=cfg.optim.momentum,
            weight_decay=cfg.optim.weight_decay,
            decay_epochs=cfg.optim.decay_epochs,
            gamma=cfg.optim.gamma,
            batch_size=cfg.train.batch_size,
            seed=cfg.seed,
            on_epoch=on_epoch,
        )
        log_path.write_text("\n".join(lines) + ("\n" if lines else ""))
        stgcn_net.save_checkpoint(
            cfg.checkpoint_path, model, {**meta, "epoch": max(cfg.train.epochs - 1, 0)}
        )
        log.info("wrote %s", cfg.checkpoint_path)
    return 0


def cmd_eval(cfg: RunConfig, force: bool) -> int:
    manifest, samples, graph, labels = _load_manifest(cfg)
    model, meta = stgcn_net.load_checkpoint(cfg.checkpoint_path)
    classes = _class_mapping(samples)

    if model.arch.num_classes != len(classes):
        raise ArchitectureMismatch(
            f"checkpoint has {model.arch.num_classes} classes, manifest {len(classes)}"
        )
    if model.arch.in_channels != samples[0].tensor.C:
        raise ArchitectureMismatch(
            f"checkpoint expects C={model.arch.in_channels}, tensors have C={samples[0].tensor.C}"
        )
    if model.J != graph.J:
        raise ArchitectureMismatch(f"checkpoint J={model.J}, graph J={graph.J}")
    if (model.arch.block_channels, model.arch.strides, model.arch.kernel_size) != (
        cfg.model.block_channels, cfg.model.strides, cfg.model.kernel_size
    ):
        raise ArchitectureMismatch("checkpoint block architecture disagrees with config")

    _, test_side = dataset_synth.cross_emotion_split(samples, cfg.train.train_emotions)
    if not test_side:
        raise EmptySide("no test samples")

    by_emotion: dict[int, list[int]] = {}
    correct = 0
    for s in test_side:
        pred = stgcn_net.predict(model, s.tensor.values)
        ok = int(pred == classes[s.identity])
        correct += ok
        by_emotion.setdefault(s.emotion, []).append(ok)

    report = {
        "total": len(test_side),
        "correct": correct,
        "accuracy": correct / len(test_side),
        "per_emotion": [
            {
                "emotion": e,
                "total": len(v),
                "correct": sum(v),
                "accuracy": sum(v) / len(v),
            }
            for e, v in sorted(by_emotion.items())
        ],
        "checkpoint_epoch": meta.get("epoch"),
    }
    out = cfg.output_dir
    with _output_lock(out):
        report_path = out / "eval_report.json"
        _refuse_existing(report_path, force)
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facegcn",
        description="Dynamic 3D face identification pipeline on synthetic or generic mesh sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset of feature tensors"),
        ("preprocess", "turn raw per-frame mesh+landmark sequences into feature tensors"),
        ("train", "train the ST-GCN on the cross-emotion train side"),
        ("eval", "evaluate a checkpoint on the cross-emotion test side"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration (defaults used if omitted)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration and exit")
        p.add_argument("--seed", type=int, help="override the configured seed")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
        if args.print_config:
            print(serialize_config(cfg), end="")
            return 0
        return _COMMANDS[args.command](cfg, args.force)
    except NumericalError as exc:
        print(f"facegcn: numerical error: {exc}", file=sys.stderr)
        return 3
    except (FaceGcnError, FileNotFoundError, OSError) as exc:
        print(f"facegcn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
