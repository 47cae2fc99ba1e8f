"""Command-line pipeline: synth, learn, parse, eval, heatmap, validate.

Exit codes: 0 success, 2 usage or bad input, 3 missing data, 4 violated
contract.  Logs go to stderr; machine-readable results go to files, each
accompanied by a manifest listing inputs and output digests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import FormatError, GenerationError, ParseError
from .evaluation import evaluate, heatmap_export, save_report
from .features import (
    load_annotations,
    load_volume,
    save_annotations,
    save_volume,
    validate_volume,
)
from .mining import MinerConfig, config_from_json, grow_aog
from .model import ScoreWeights, build_skeleton, load_aog, save_aog, validate_aog
from .parsing import parse_semantic
from .synth import spec_from_json, synth_generate

log = logging.getLogger("aogparts")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONTRACT = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, seed, inputs, outputs) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in outputs],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_json(path: Path, what: str) -> dict:
    if not path.exists():
        raise CliError(f"{what} file not found: {path}", EXIT_USAGE)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} is not valid JSON: {exc}", EXIT_USAGE) from exc


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"{what} not found: {path}", EXIT_USAGE)
    return path


def cmd_synth(args) -> int:
    doc = _load_json(Path(args.spec), "synth spec")
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = spec_from_json(doc)
        volumes, annotations, planted = synth_generate(spec)
    except (KeyError, TypeError, ValueError, GenerationError) as exc:
        raise CliError(f"invalid synth spec: {exc}", EXIT_USAGE) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for vol in volumes:
        path = out / f"{vol.image_id}.fvol"
        save_volume(vol, path)
        written.append(path)
    ann_path = out / "annotations.json"
    save_annotations(annotations, ann_path)
    written.append(ann_path)
    gt_path = out / "ground_truth.json"
    with open(gt_path, "w", encoding="utf-8") as fh:
        json.dump(
            [
                {
                    "template": p.template_id,
                    "layer": p.layer_id,
                    "slice": p.conv_slice,
                    "center": list(p.center_px),
                }
                for p in planted
            ],
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")
    written.append(gt_path)
    _write_manifest(out, "synth", spec.seed, [args.spec], written)
    log.info("wrote %d volumes to %s", len(volumes), out)
    return EXIT_OK


def _load_learn_inputs(args):
    features_dir = _require(Path(args.features), "features directory")
    annotations = load_annotations(_require(Path(args.annotations), "annotations"))
    if not annotations:
        raise CliError("annotation list is empty", EXIT_USAGE)
    config, weights = MinerConfig(), ScoreWeights()
    if args.config:
        config, weights = config_from_json(_load_json(Path(args.config), "config"))
    if args.seed is not None:
        config = MinerConfig(
            nk=config.nk,
            epsilon_units=config.epsilon_units,
            nk_fallback=config.nk_fallback,
            unannotated_cap=config.unannotated_cap,
            seed=args.seed,
        )
    volumes = {}
    for path in sorted(features_dir.glob("*.fvol")):
        vol = load_volume(path)
        volumes[vol.image_id] = vol
    missing = sorted({a.image_id for a in annotations} - set(volumes))
    if missing:
        raise CliError(f"annotations reference missing volumes: {missing}", EXIT_MISSING)
    return annotations, volumes, config, weights


def cmd_learn(args) -> int:
    annotations, volumes, config, weights = _load_learn_inputs(args)
    annotated = [(volumes[a.image_id], a) for a in annotations]
    try:
        skeleton = build_skeleton(annotations, weights)
        aog = grow_aog(skeleton, annotated, list(volumes.values()), config)
    except (ValueError, KeyError) as exc:
        raise CliError(f"learning failed: {exc}", EXIT_CONTRACT) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_aog(aog, out)
    _write_manifest(out.parent, "learn", config.seed,
                    [args.features, args.annotations] + ([args.config] if args.config else []),
                    [out])
    log.info("wrote graph with %d templates to %s", len(aog.templates), out)
    return EXIT_OK


def cmd_parse(args) -> int:
    aog = load_aog(_require(Path(args.aog), "graph"))
    vol = load_volume(_require(Path(args.features), "feature volume"))
    try:
        parse = parse_semantic(aog, vol)
    except (KeyError, ParseError) as exc:
        raise CliError(f"parse failed: {exc}", EXIT_CONTRACT) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(parse.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(out.parent, "parse", None, [args.aog, args.features], [out])
    return EXIT_OK


def cmd_eval(args) -> int:
    aog = load_aog(_require(Path(args.aog), "graph"))
    features_dir = _require(Path(args.features), "features directory")
    annotations = load_annotations(_require(Path(args.annotations), "annotations"))
    by_id = {a.image_id: a for a in annotations}
    parses = []
    dims = None
    for path in sorted(features_dir.glob("*.fvol")):
        vol = load_volume(path)
        if vol.image_id not in by_id:
            continue
        dims = (vol.image_width_px, vol.image_height_px)
        try:
            parses.append(parse_semantic(aog, vol))
        except (KeyError, ParseError) as exc:
            raise CliError(f"parse failed on {vol.image_id}: {exc}", EXIT_CONTRACT) from exc
    if not parses or dims is None:
        raise CliError("no annotated volumes found to evaluate", EXIT_MISSING)
    report = evaluate(parses, annotations, dims)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_report(report, out)
    _write_manifest(out.parent, "eval", None,
                    [args.aog, args.features, args.annotations], [out])
    log.info(
        "evaluated %d images: detection %.3f, center %.3f, distance %.4f",
        len(report.records),
        report.detection_rate,
        report.center_prediction_rate,
        report.mean_normalized_distance,
    )
    return EXIT_OK


def cmd_heatmap(args) -> int:
    aog = load_aog(_require(Path(args.aog), "graph"))
    vol = load_volume(_require(Path(args.features), "feature volume"))
    try:
        parse = parse_semantic(aog, vol)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        heatmap_export(parse, vol, args.layer, out)
    except (KeyError, ParseError) as exc:
        raise CliError(f"heat map failed: {exc}", EXIT_CONTRACT) from exc
    _write_manifest(out.parent, "heatmap", None, [args.aog, args.features], [out])
    return EXIT_OK


def cmd_validate(args) -> int:
    path = _require(Path(args.path), "input")
    if path.suffix == ".fvol":
        vol = load_volume(path)
        problems = validate_volume(vol)
    else:
        aog = load_aog(path)
        problems = validate_aog(aog)
    for p in problems:
        print(p)
    if problems:
        raise CliError(f"{len(problems)} violations in {path}", EXIT_CONTRACT)
    log.info("%s: ok", path)
    return EXIT_OK


def build_argparser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aogparts", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("learn", help="grow a graph from annotations")
    p.add_argument("--features", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("parse", help="parse one feature volume")
    p.add_argument("--aog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="evaluate localization over a dataset")
    p.add_argument("--aog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="export a layer heat map for one image")
    p.add_argument("--aog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("validate", help="check a volume or graph file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    return ap


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    ap = build_argparser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except FormatError as exc:
        log.error("format error: %s", exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
