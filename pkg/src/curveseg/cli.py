"""Command line interface: ``segment``, ``match``, ``synth``, ``evaluate``.

Every flag has a config-file twin (UTF-8 ``key=value`` lines, given with
``--config``); explicit flags win over config values, which win over the
built-in defaults.  The resolved configuration is echoed into the output
directory.  Exit codes: 1 for unusable inputs, 2 for unusable
configuration, 3 for internal failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import evalbench, imagecore, matching, report
from .errors import (
    ConfigError,
    CurvesegError,
    EmptyPatternError,
    ParamError,
)
from .evalbench import DesignParams, SynthParams
from .imagecore import DepthImage
from .matching import DesignIndex, PointSet, SearchParams
from .pipeline import PipelineOptions, SegmentationResult, segment_depth
from .skeleton import SkeletonSet

EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

DEFAULTS = {
    "scorer": "classical",
    "weights": None,
    "refiner": "classical",
    "refiner_weights": None,
    "threshold": 0.5,
    "pitch": 0.5,
    "image_pitch": None,
    "rot_step": 6.0,
    "rot_refine": 1.0,
    "max_points": 150,
    "seed": 0,
    "designs": 20,
    "sherds": 3,
    "noise": 0.1,
    "stamp_depth": 1.0,
    "base_amp": 0.25,
    "size_px": 200,
    "segmenter": "pipeline",
}


def _read_kv(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    for line in p.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#") and "=" not in line:
            raise ConfigError(f"config line without '=': {line!r}")
    return _read_kv(p)


def _resolve(args: argparse.Namespace, config: dict[str, str]) -> dict:
    """Merge flag values, config-file values and defaults."""
    out = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            raw = config[key]
            if raw.lower() in ("none", ""):
                out[key] = None
            elif isinstance(default, bool):
                out[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int) and not isinstance(default, bool):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = raw
        else:
            out[key] = default
    try:
        if not (0.0 < float(out["threshold"]) < 1.0):
            raise ConfigError("threshold must be in (0, 1)")
        if float(out["pitch"]) <= 0:
            raise ConfigError("pitch must be positive")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric config value: {exc}") from None
    for key in ("weights", "refiner_weights"):
        if out[key] and not Path(out[key]).exists():
            raise ConfigError(f"{key.replace('_', '-')} file {out[key]} does not exist")
    return out


def _echo_config(values: dict, out_dir: Path) -> None:
    lines = [f"{k}={values[k]}" for k in sorted(values)]
    _atomic_write_bytes(out_dir / "config.txt", ("\n".join(lines) + "\n").encode())


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _atomic_save(path: Path, saver, *args) -> None:
    tmp = path.with_name(path.name + ".tmp")
    saver(*args, tmp)
    os.replace(tmp, path)
    side = Path(str(tmp) + ".txt")
    if side.exists():
        os.replace(side, Path(str(path) + ".txt"))


def _pipeline_options(cfg: dict) -> PipelineOptions:
    return PipelineOptions(
        scorer_backend=cfg["scorer"],
        scorer_weights=cfg["weights"],
        refiner=cfg["refiner"],
        refiner_weights=cfg["refiner_weights"],
        threshold=float(cfg["threshold"]),
    )


def _search_params(cfg: dict) -> SearchParams:
    return SearchParams(
        pitch=float(cfg["pitch"]),
        rot_step_deg=float(cfg["rot_step"]),
        rot_refine_deg=float(cfg["rot_refine"]),
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------


def _run_segment(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _read_config(args.config))
    depth = imagecore.load_depth_pgm(args.depth, pitch=cfg["image_pitch"])
    result = segment_depth(depth, _pipeline_options(cfg))

    out = Path(args.out or "segment_out")
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    _atomic_save(out / "heat.pgm", imagecore.save_gray16_pgm, result.heat * 65535.0)
    _atomic_save(out / "skeleton.pgm", imagecore.save_mask_pgm, result.skeleton.to_mask())
    scale_levels = (result.scale * 85).astype(np.uint8)
    header = f"P5\n{scale_levels.shape[1]} {scale_levels.shape[0]}\n255\n".encode()
    _atomic_write_bytes(out / "scale.pgm", header + scale_levels.tobytes())
    _atomic_save(out / "seg.pgm", imagecore.save_mask_pgm, result.mask)
    _atomic_save(out / "overlay.ppm", imagecore.save_overlay_ppm, depth, result.mask)
    print(f"segment: {len(result.skeleton)} skeleton px, "
          f"{int(result.mask.sum())} curve px -> {out}")
    return 0


# ---------------------------------------------------------------------------
# match
# ---------------------------------------------------------------------------


def load_design_dir(design_dir: Path, pitch_default: float) -> list[PointSet]:
    """Design library: ``labels.txt`` plus one ``<label>.txt`` point list
    (x y per line, mm) or ``<label>.pgm`` mask per label."""
    labels_file = design_dir / "labels.txt"
    if not labels_file.exists():
        raise ConfigError(f"{design_dir} has no labels.txt")
    designs = []
    for label in labels_file.read_text(encoding="utf-8").split():
        txt = design_dir / f"{label}.txt"
        pgm = design_dir / f"{label}.pgm"
        if txt.exists():
            pts = np.loadtxt(txt, dtype=np.float64, ndmin=2)
            if pts.size == 0:
                raise EmptyPatternError(f"design {label} is empty")
            designs.append(PointSet(points=pts[:, :2], label=label))
        elif pgm.exists():
            mask = imagecore.load_mask_pgm(pgm)
            side = imagecore.read_sidecar(pgm)
            pitch = float(side.get("pitch", pitch_default))
            skel = SkeletonSet.from_mask(imagecore.thin(mask.data))
            if len(skel) == 0:
                raise EmptyPatternError(f"design {label} is empty")
            designs.append(PointSet(points=skel.points * pitch, label=label))
        else:
            raise ConfigError(f"design {label} has neither {label}.txt nor {label}.pgm")
    if not designs:
        raise ConfigError(f"{design_dir} lists no designs")
    return designs


def _mask_to_mm_points(mask: np.ndarray, pitch: float, max_points: int) -> np.ndarray:
    skel = SkeletonSet.from_mask(imagecore.thin(mask))
    if len(skel) == 0:
        raise EmptyPatternError("segmentation contains no curve pixels")
    return matching.subsample(skel.points.astype(np.float64) * pitch, max_points)


def _ranking_rows(results: list) -> list[list]:
    rows = []
    for rank, r in enumerate(results, start=1):
        rows.append([
            rank,
            r.label,
            f"{r.distance:.6f}",
            f"{np.degrees(r.transform.rotation):.3f}",
            f"{r.transform.dx:.3f}",
            f"{r.transform.dy:.3f}",
        ])
    return rows


def _run_match(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _read_config(args.config))
    mask = imagecore.load_mask_pgm(args.segmentation)
    side = imagecore.read_sidecar(args.segmentation)
    image_pitch = cfg["image_pitch"]
    if image_pitch is None:
        image_pitch = float(side.get("pitch", imagecore.DEFAULT_PITCH_MM))
    points = _mask_to_mm_points(mask.data, float(image_pitch), int(cfg["max_points"]))

    designs = load_design_dir(Path(args.designs_dir), float(cfg["pitch"]))
    search = _search_params(cfg)
    indices = [DesignIndex(d, pitch=search.pitch) for d in designs]
    results = matching.rank_designs(PointSet(points=points, label="query"), indices, search)

    out = Path(args.out or "ranking.csv")
    _write_csv(out, ["rank", "label", "distance", "rot_deg", "dx_mm", "dy_mm"],
               _ranking_rows(results))
    best = results[0]
    print(f"match: best design {best.label} at distance {best.distance:.4f} mm -> {out}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _meta_text(idx: int, sherd, design_seed: int, sherd_seed: int) -> str:
    t = sherd.truth.transform
    return (
        f"label={sherd.truth.label}\n"
        f"design_seed={design_seed}\n"
        f"sherd_seed={sherd_seed}\n"
        f"rot_deg={np.degrees(t.rotation):.6f}\n"
        f"dx_mm={t.dx:.6f}\n"
        f"dy_mm={t.dy:.6f}\n"
    )


def _run_synth(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _read_config(args.config))
    n_designs = int(cfg["designs"])
    n_sherds = int(cfg["sherds"])
    if n_designs < 1 or n_sherds < 1:
        raise ConfigError("need at least one design and one sherd per design")
    out = Path(args.out or "corpus")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"{out} already exists; pass --force to overwrite")
    (out / "designs").mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)

    seed = int(cfg["seed"])
    params = SynthParams(
        noise_sigma=float(cfg["noise"]),
        stamp_depth=float(cfg["stamp_depth"]),
        base_amp=float(cfg["base_amp"]),
        size_px=int(cfg["size_px"]),
    )
    labels = []
    idx = 0
    for d in range(n_designs):
        design = evalbench.synth_design(seed + d)
        labels.append(design.label)
        pts = design.skeleton_points().points
        body = "\n".join(f"{x:.4f} {y:.4f}" for x, y in pts) + "\n"
        _atomic_write_bytes(out / "designs" / f"{design.label}.txt", body.encode())
        for s in range(n_sherds):
            sherd_params = SynthParams(**{**params.__dict__, "seed": s})
            sherd = evalbench.synth_sherd(design, sherd_params)
            _atomic_save(out / f"depth_{idx:04d}.pgm", imagecore.save_depth_pgm, sherd.depth)
            _atomic_save(out / f"gt_{idx:04d}.pgm", imagecore.save_mask_pgm, sherd.gt_mask)
            _atomic_write_bytes(out / f"meta_{idx:04d}.txt",
                                _meta_text(idx, sherd, design.seed, s).encode())
            idx += 1
    _atomic_write_bytes(out / "designs" / "labels.txt", ("\n".join(labels) + "\n").encode())
    print(f"synth: wrote {idx} sherds from {n_designs} designs -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _corpus_items(corpus: Path) -> list[tuple[Path, Path, Path]]:
    depths = sorted(corpus.glob("depth_*.pgm"))
    if not depths:
        raise ParamError(f"{corpus} contains no depth_*.pgm files")
    items = []
    problems = []
    for depth_file in depths:
        stem = depth_file.stem.split("_", 1)[1]
        gt = corpus / f"gt_{stem}.pgm"
        meta = corpus / f"meta_{stem}.txt"
        if not gt.exists():
            problems.append(str(gt))
            continue
        items.append((depth_file, gt, meta))
    if problems:
        raise ParamError("corpus is missing ground truth for: " + ", ".join(problems))
    return items


def _segment_for_eval(depth: DepthImage, gt: np.ndarray, segmenter: str,
                      options: PipelineOptions) -> np.ndarray:
    if segmenter == "oracle":
        return gt
    if segmenter == "dog":
        return evalbench.dog_baseline(depth)
    result = segment_depth(depth, options)
    if segmenter == "dilate":
        return evalbench.dilate_ablation(result.skeleton)
    return result.mask


def _run_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _read_config(args.config))
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise ParamError(f"corpus directory {corpus} does not exist")
    segmenter = cfg["segmenter"]
    if segmenter not in ("pipeline", "dog", "dilate", "oracle"):
        raise ConfigError(f"unknown segmenter {segmenter!r}")
    options = _pipeline_options(cfg)
    out = Path(args.out or (corpus / "eval"))
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)

    rows = []
    scores = []
    predictions = []
    for depth_file, gt_file, meta_file in _corpus_items(corpus):
        depth = imagecore.load_depth_pgm(depth_file)
        gt = imagecore.load_mask_pgm(gt_file).data
        pred = _segment_for_eval(depth, gt, segmenter, options)
        score = evalbench.prf(pred, gt)
        scores.append(score)
        meta = _read_kv(meta_file) if meta_file.exists() else {}
        predictions.append((depth_file.name, pred, gt, depth.pitch, meta))
        rows.append([depth_file.name, f"{score.precision:.6f}",
                     f"{score.recall:.6f}", f"{score.f_measure:.6f}"])

    _write_csv(out / "metrics.csv", ["image", "precision", "recall", "f"], rows)
    mean = evalbench.average_prf(scores)
    pooled = evalbench.pooled_prf([(pred, gt) for _, pred, gt, _, _ in predictions])
    _write_csv(out / "summary.csv", ["mode", "precision", "recall", "f"], [
        ["per_image", f"{mean.precision:.6f}", f"{mean.recall:.6f}", f"{mean.f_measure:.6f}"],
        ["pooled", f"{pooled.precision:.6f}", f"{pooled.recall:.6f}", f"{pooled.f_measure:.6f}"],
    ])
    report.prf_figure(scores, mean, out / "fmeasure.png",
                      title=f"Segmentation quality ({segmenter})")
    print(f"evaluate: mean F {mean.f_measure:.4f} over {len(scores)} images -> {out}")

    design_dir = corpus / "designs"
    if design_dir.is_dir() and not args.no_match:
        designs = load_design_dir(design_dir, float(cfg["pitch"]))
        search = _search_params(cfg)
        indices = [DesignIndex(d, pitch=search.pitch) for d in designs]
        rankings = []
        truths = []
        for name, pred, _, pitch, meta in predictions:
            if not meta.get("label"):
                raise ParamError(f"{name}: meta file lacks a design label")
            points = _mask_to_mm_points(pred, pitch, int(cfg["max_points"]))
            results = matching.rank_designs(
                PointSet(points=points, label=name), indices, search)
            rankings.append([r.label for r in results])
            truths.append(meta["label"])
        cmc = matching.cmc_curve(rankings, truths)
        _write_csv(out / "cmc.csv", ["L", "accuracy"],
                   [[i + 1, f"{v:.6f}"] for i, v in enumerate(cmc)])
        report.cmc_figure(cmc, out / "cmc.png",
                          title=f"Design matching ({segmenter})")
        print(f"evaluate: CMC rank-1 {cmc[0]:.3f}, rank-{len(cmc)} {cmc[-1]:.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help="output file or directory")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scorer", choices=["classical", "convnet"], default=None)
    p.add_argument("--weights", default=None, help="CRVW1 weights for the convnet scorer")
    p.add_argument("--refiner", choices=["classical", "convnet", "none"], default=None)
    p.add_argument("--refiner-weights", dest="refiner_weights", default=None)
    p.add_argument("--threshold", type=float, default=None,
                   help="heat-map binarisation threshold (default 0.5)")


def _add_match_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pitch", type=float, default=None,
                   help="design raster pitch in mm (default 0.5)")
    p.add_argument("--image-pitch", dest="image_pitch", type=float, default=None,
                   help="override the depth image pixel pitch in mm")
    p.add_argument("--rot-step", dest="rot_step", type=float, default=None,
                   help="coarse rotation step in degrees (default 6)")
    p.add_argument("--rot-refine", dest="rot_refine", type=float, default=None,
                   help="refined rotation step in degrees (default 1)")
    p.add_argument("--max-points", dest="max_points", type=int, default=None,
                   help="subsample the query skeleton to this many points")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curveseg",
        description="Segment stamped curve structures from depth maps and "
                    "match them against full designs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="run the segmentation pipeline on one depth map")
    p.add_argument("depth", help="input binary PGM depth map")
    _add_common(p)
    _add_pipeline_flags(p)
    p.add_argument("--image-pitch", dest="image_pitch", type=float, default=None)
    p.set_defaults(func=_run_segment)

    p = sub.add_parser("match", help="rank designs for one segmentation mask")
    p.add_argument("segmentation", help="segmentation or skeleton mask (PGM)")
    p.add_argument("designs_dir", help="directory with labels.txt and design files")
    _add_common(p)
    _add_match_flags(p)
    p.set_defaults(func=_run_match)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--designs", type=int, default=None)
    p.add_argument("--sherds", type=int, default=None, help="sherds per design")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None, help="depth noise std in mm")
    p.add_argument("--stamp-depth", dest="stamp_depth", type=float, default=None)
    p.add_argument("--base-amp", dest="base_amp", type=float, default=None)
    p.add_argument("--size-px", dest="size_px", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_run_synth)

    p = sub.add_parser("evaluate", help="score a corpus (metrics, CMC, figures)")
    p.add_argument("corpus", help="corpus directory from `curveseg synth`")
    _add_common(p)
    _add_pipeline_flags(p)
    _add_match_flags(p)
    p.add_argument("--segmenter", choices=["pipeline", "dog", "dilate", "oracle"],
                   default=None)
    p.add_argument("--no-match", dest="no_match", action="store_true",
                   help="skip design matching even when designs/ is present")
    p.set_defaults(func=_run_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CurvesegError, FileNotFoundError, OSError) as exc:
        print(f"error (input): {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:  # pragma: no cover - defensive
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
