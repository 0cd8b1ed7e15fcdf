"""Command-line entry point: ``ridgediff <subcommand> [options]``.

Every subcommand writes under the ``--out`` root, draws all randomness
from ``--seed`` (or ``run.seed``), reports progress on standard error and
returns 0 on success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from . import denoiser, diffusion, evaluate, minutiae, preprocess, synthcorpus
from .config import RunConfig, parse_config
from .errors import IoFailure, RidgeDiffError
from .imagecore import load_image, save_image
from .matcher import MatcherConfig, pairwise_scores, write_scores_csv

IMAGE_EXTS = (".pgm", ".png")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# --------------------------------------------------------------------------- input helpers


def list_images(directory) -> list[tuple[str, int | None]]:
    """Image file names in a directory with their identity ids when a manifest exists.

    Manifest order wins; otherwise files are sorted by name.
    """
    if not os.path.isdir(directory):
        raise IoFailure(f"input directory {directory} does not exist")
    manifest = os.path.join(directory, "manifest.tsv")
    if os.path.exists(manifest):
        return [(e.path, e.identity_id) for e in synthcorpus.read_manifest(manifest)]
    names = sorted(os.path.basename(p) for p in glob.glob(os.path.join(directory, "*"))
                   if p.lower().endswith(IMAGE_EXTS))
    return [(n, None) for n in names]


def load_images(directory):
    listed = list_images(directory)
    return [n for n, _ in listed], [load_image(os.path.join(directory, n)) for n, _ in listed], [i for _, i in listed]


def _stem(name: str) -> str:
    return os.path.splitext(os.path.basename(name))[0]


def _schedule(cfg: RunConfig) -> diffusion.NoiseSchedule:
    return diffusion.linear_schedule(cfg["diffusion.T"], cfg["diffusion.beta_start"], cfg["diffusion.beta_end"])


def matcher_config(cfg: RunConfig) -> MatcherConfig:
    return MatcherConfig(cfg["matcher.d_max"], cfg["matcher.dist_tol"], np.deg2rad(cfg["matcher.angle_tol_deg"]),
                         np.deg2rad(cfg["matcher.rotation_spread_deg"]), cfg["matcher.position_tol"],
                         cfg["matcher.threshold"])


def _write_image_manifest(out_dir, names, identities, seeds) -> None:
    entries = []
    for n, ident, seed in zip(names, identities, seeds):
        imp = int(_stem(n).split("_impr")[-1]) if "_impr" in n else 0
        entries.append(synthcorpus.CorpusEntry(n, -1 if ident is None else ident, imp, seed))
    synthcorpus.write_manifest(entries, os.path.join(out_dir, "manifest.tsv"))


# --------------------------------------------------------------------------- subcommands


def cmd_synth_corpus(args, cfg: RunConfig) -> None:
    out = evaluate.ensure_dir(os.path.join(args.out, "corpus"))
    seed = cfg["corpus.seed"] if "corpus.seed" in cfg.explicit and args.seed is None else cfg.seed
    entries = synthcorpus.gen_corpus(out, cfg["corpus.n_ids"], cfg["corpus.n_impr"], cfg["corpus.side"], seed)
    _err(f"synth-corpus: wrote {len(entries)} images to {out}")


def cmd_preprocess(args, cfg: RunConfig) -> None:
    variant = args.variant or cfg["preprocess.variant"]
    pcfg = preprocess.PreprocessConfig(variant, cfg["preprocess.crop_mean_threshold"], cfg["preprocess.ink_threshold"],
                                       cfg["preprocess.min_quality"], cfg["preprocess.output_side"])
    names, images, idents = load_images(args.input)
    kept, index = preprocess.run_pipeline(images, pcfg, return_indices=True)
    out = evaluate.ensure_dir(os.path.join(args.out, "preprocessed", pcfg.variant.value))
    out_names = []
    for img, i in zip(kept, index):
        name = _stem(names[i]) + ".pgm"
        save_image(img, os.path.join(out, name), "pgm")
        out_names.append(name)
    _write_image_manifest(out, out_names, [idents[i] for i in index], [cfg.seed] * len(out_names))
    _err(f"preprocess[{pcfg.variant.value}]: kept {len(kept)} of {len(images)} images")


def cmd_train(args, cfg: RunConfig) -> None:
    _, images, _ = load_images(args.input)
    if not images:
        raise IoFailure(f"no images in {args.input}")
    out = evaluate.ensure_dir(os.path.join(args.out, "model"))
    side = images[0].width
    model = denoiser.init_model(cfg["denoiser.init_features"], side, cfg.seed, cfg["denoiser.depth"],
                                cfg["denoiser.time_embed_dim"])
    tcfg = denoiser.TrainConfig(cfg["train.batch_size"], cfg["train.steps"], cfg["train.learning_rate"], cfg.seed,
                                cfg["train.checkpoint_every"])
    ckpt = os.path.join(out, "checkpoint.dfck")
    every = max(1, tcfg.steps // 10)

    def progress(step, loss):
        if step % every == 0 or step == tcfg.steps:
            _err(f"train: step {step}/{tcfg.steps} loss {loss:.5f}")

    model, losses = denoiser.train(model, images, _schedule(cfg), tcfg, ckpt, progress)
    denoiser.save_checkpoint(model, ckpt)
    denoiser.write_loss_csv(losses, os.path.join(out, "loss.csv"))


def _load_model(args):
    path = args.checkpoint or os.path.join(args.out, "model", "checkpoint.dfck")
    return denoiser.load_checkpoint(path)


def cmd_sample(args, cfg: RunConfig) -> None:
    model = _load_model(args)
    count = args.count if args.count is not None else cfg["sample.count"]
    rng = np.random.default_rng(cfg.seed)
    images = diffusion.sample(model, _schedule(cfg), model.side, rng, count, cfg["sample.batch"])
    out = evaluate.ensure_dir(os.path.join(args.out, "samples"))
    for k, img in enumerate(images):
        save_image(img, os.path.join(out, f"sample_{k:04d}.pgm"), "pgm")
    _err(f"sample: wrote {len(images)} images to {out}")


def cmd_impress(args, cfg: RunConfig) -> None:
    model = _load_model(args)
    m = args.identities if args.identities is not None else cfg["corpus.n_ids"]
    spec = diffusion.BranchSpec(args.d if args.d is not None else cfg["diffusion.branch_d"],
                                args.k if args.k is not None else cfg["diffusion.branch_k"])
    rng = np.random.default_rng(cfg.seed)
    groups = diffusion.branch_identities(model, _schedule(cfg), spec, model.side, rng, m, cfg["sample.batch"])
    out = evaluate.ensure_dir(os.path.join(args.out, "impressions"))
    entries = []
    for i, group in enumerate(groups):
        for j, img in enumerate(group):
            name = f"id{i}_impr{j}.pgm"
            save_image(img, os.path.join(out, name), "pgm")
            entries.append(synthcorpus.CorpusEntry(name, i, j, cfg.seed))
    synthcorpus.write_manifest(entries, os.path.join(out, "manifest.tsv"))
    _err(f"impress: wrote {len(entries)} impressions of {m} identities to {out}")


def extract_all(images, border_margin: float) -> list[minutiae.MinutiaeTemplate]:
    """Templates for every image; featureless images give empty templates."""
    out = []
    for img in images:
        try:
            out.append(minutiae.extract_template(img, border_margin))
        except RidgeDiffError:
            out.append(minutiae.MinutiaeTemplate(img.width, ()))
    return out


def cmd_extract(args, cfg: RunConfig) -> None:
    names, images, idents = load_images(args.input)
    out = evaluate.ensure_dir(os.path.join(args.out, "templates"))
    templates = extract_all(images, cfg["minutiae.border_margin"])
    tnames = []
    for n, t in zip(names, templates):
        tnames.append(_stem(n) + ".txt")
        minutiae.save_template(t, os.path.join(out, tnames[-1]))
    _write_image_manifest(out, tnames, idents, [cfg.seed] * len(tnames))
    _err(f"extract: wrote {len(templates)} templates to {out}")


def load_templates(directory):
    manifest = os.path.join(directory, "manifest.tsv")
    if os.path.exists(manifest):
        names = [e.path for e in synthcorpus.read_manifest(manifest)]
    else:
        names = sorted(os.path.basename(p) for p in glob.glob(os.path.join(directory, "*.txt")))
    return names, [minutiae.load_template(os.path.join(directory, n)) for n in names]


def cmd_match(args, cfg: RunConfig) -> None:
    names, templates = load_templates(args.input)
    rows = pairwise_scores(templates, False, matcher_config(cfg))
    evaluate.ensure_dir(args.out)
    path = os.path.join(args.out, "scores.csv")
    write_scores_csv(rows, path, [_stem(n) for n in names])
    _err(f"match: wrote {len(rows)} scores to {path}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    names, images, idents = load_images(args.input)
    if not images:
        raise IoFailure(f"no images in {args.input}")
    out = evaluate.ensure_dir(os.path.join(args.out, "report"))
    mcfg = matcher_config(cfg)
    lines = [f"images {len(images)}"]

    q = evaluate.quality_report(images)
    evaluate.write_quality_csv(names, q, os.path.join(out, "quality.csv"))
    lines.append(f"quality_mean {q.mean:.4f}")
    lines.append(f"quality_std {q.std:.4f}")

    if args.reference:
        _, ref, _ = load_images(args.reference)
        fd = evaluate.frechet_distance(evaluate.fit_stats(images), evaluate.fit_stats(ref))
        lines.append(f"frechet_distance {fd:.6f}")

    templates = extract_all(images, cfg["minutiae.border_margin"])
    if len(templates) >= 2:
        div = evaluate.diversity_report(templates, False, mcfg)
        evaluate.write_histogram_csv(div, os.path.join(out, "diversity_histogram.csv"))
        evaluate.plot_histogram_svg(div, os.path.join(out, "diversity_histogram.svg"))
        lines.append(f"diversity_mean {div.mean:.4f}")
        lines.append(f"diversity_std {div.std:.4f}")

    if all(i is not None and i >= 0 for i in idents):
        groups: dict[int, list] = {}
        for ident, t in zip(idents, templates):
            groups.setdefault(ident, []).append(t)
        grouped = [groups[k] for k in sorted(groups)]
        if len(grouped) >= 1 and all(len(g) >= 2 for g in grouped):
            rep = evaluate.impression_report(grouped, mcfg)
            evaluate.write_cdf_csv(rep, os.path.join(out, "impression_cdf.csv"))
            evaluate.plot_cdf_svg(rep, os.path.join(out, "impression_cdf.svg"))
            lines.append(f"impression_fraction_above_threshold {rep.fraction_above:.6f}")
            lines.append(f"impression_max_score {rep.max_score}")
            if len(grouped) >= 2:
                inter = evaluate.inter_group_scores(grouped, mcfg, cfg["evaluate.max_inter_pairs"], cfg.seed)
                lines.append(f"inter_identity_fraction_above_threshold "
                             f"{float(np.mean(np.asarray(inter) >= mcfg.threshold)):.6f}")
    evaluate.write_summary(lines, os.path.join(out, "summary.txt"))
    _err(f"evaluate: wrote reports to {out}")


COMMANDS = {
    "synth-corpus": (cmd_synth_corpus, "generate a procedural fingerprint corpus"),
    "preprocess": (cmd_preprocess, "quality-filter, crop and resize a directory of images"),
    "train": (cmd_train, "train the denoiser on a directory of images"),
    "sample": (cmd_sample, "draw images from a trained checkpoint"),
    "impress": (cmd_impress, "draw several impressions per synthetic identity"),
    "extract": (cmd_extract, "extract minutiae templates from a directory of images"),
    "match": (cmd_match, "score every pair of templates in a directory"),
    "evaluate": (cmd_evaluate, "write quality, distance and diversity reports"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="line-based config file")
    common.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    common.add_argument("--out", default="out", help="output root directory")

    parser = argparse.ArgumentParser(prog="ridgediff", description="Diffusion fingerprint synthesis lab.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("preprocess", "train", "extract", "match", "evaluate"):
            p.add_argument("--input", required=True, help="input directory")
        if name in ("sample", "impress"):
            p.add_argument("--checkpoint", help="checkpoint path (default: OUT/model/checkpoint.dfck)")
        if name == "preprocess":
            p.add_argument("--variant", choices=["fp", "nocrop", "nofilter"])
        if name == "sample":
            p.add_argument("--count", type=int)
        if name == "impress":
            p.add_argument("--identities", type=int)
            p.add_argument("--k", type=int)
            p.add_argument("--d", type=int)
        if name == "evaluate":
            p.add_argument("--reference", help="reference image directory for the Frechet distance")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if args.seed < 0:
                parser.print_usage(sys.stderr)
                _err("ridgediff: error: --seed must be non-negative")
                return 2
            cfg.set("run.seed", args.seed)
        COMMANDS[args.command][0](args, cfg)
    except RidgeDiffError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
