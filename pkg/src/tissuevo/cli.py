"""Command-line entry point: ``tissuevo <subcommand> --config cfg.json --out dir``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import TissuevoError
from .phantom import PhantomConfig, default_config, generate_phantom, synthetic_embedding
from .report import STAGES, load_run_config, run_pipeline
from .volume_io import write_embedding_blob, write_nifti

log = logging.getLogger("tissuevo")

PHANTOM_FILES = ("volume.nii.gz", "t1.nii.gz", "t2.nii.gz")


def cmd_phantom(config_path, out_dir, seed=None, embeddings=False):
    """Render a phantom (default config when ``config_path`` is None) to NIfTI files."""
    config = PhantomConfig.from_json(config_path) if config_path else default_config()
    if seed is not None:
        config = PhantomConfig(config.dims, int(seed), config.regions, config.spacing_mm)
    out = generate_phantom(config)
    os.makedirs(out_dir, exist_ok=True)
    for name, obj in zip(PHANTOM_FILES, (out.volume, out.t1_mask, out.t2_mask)):
        write_nifti(obj, os.path.join(out_dir, name))
    if embeddings:
        _write_phantom_run_config(out, out_dir)
    return 0


def _write_phantom_run_config(out, out_dir):
    """Synthetic MJNET (dense) and NNUNET (stride 2) maps plus a ready run config."""
    nz = out.volume.spatial_dims[2]
    blobs = {"MJNET": {}, "NNUNET": {}}
    for z in range(nz):
        for family, stride in (("MJNET", 1), ("NNUNET", 2)):
            name = f"{family.lower()}_z{z}.emb"
            write_embedding_blob(synthetic_embedding(out.volume, z, stride=stride, seed=z), os.path.join(out_dir, name))
            blobs[family][str(z)] = name
    cfg = {
        "patients": [
            {"id": "phantom", "volume": PHANTOM_FILES[0], "t1": PHANTOM_FILES[1], "t2": PHANTOM_FILES[2],
             "embeddings": blobs}
        ],
        "output_dir": "results",
    }
    with open(os.path.join(out_dir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_stage(stage, config_path, out_dir=None, seed=None, workers=None):
    config = load_run_config(config_path, out_dir, seed, workers)
    run_pipeline(config, stage)
    return 0


def cmd_run(config_path, out_dir=None, seed=None, workers=None):
    return cmd_stage("run", config_path, out_dir, seed, workers)


def build_parser():
    parser = argparse.ArgumentParser(prog="tissuevo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log skipped classes and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="render a synthetic phantom to NIfTI")
    ph.add_argument("--config", help="phantom JSON (default: built-in single-patient phantom)")
    ph.add_argument("--out", required=True)
    ph.add_argument("--seed", type=int)
    ph.add_argument("--embeddings", action="store_true",
                    help="also write synthetic embedding blobs and a run_config.json")

    for stage in STAGES:
        sp = sub.add_parser(stage, help=f"pipeline stage '{stage}'" if stage != "run" else "full pipeline")
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", help="output directory (overrides output_dir in the config)")
        sp.add_argument("--seed", type=int, help="t-SNE seed override")
        sp.add_argument("--workers", type=int, help="threads for per-slice feature extraction")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "phantom":
            return cmd_phantom(args.config, args.out, args.seed, args.embeddings)
        return cmd_stage(args.command, args.config, args.out, args.seed, args.workers)
    except TissuevoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
