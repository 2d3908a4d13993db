"""Command-line pipeline driver.

Subcommands::

    synth      write a synthetic phantom cohort in the dataset layout
    segment    derive fallback skull masks for a cohort
    fit        robust skull-ellipse fits with overlay images
    register   register every subject to the reference with the chosen methods
    maps       per-structure probability maps from registered landmarks
    evaluate   metric tables and pairwise statistical comparisons
    report     boxplot figures and a markdown summary from the metric tables

Exit codes: 0 success, 1 fatal error, 2 usage error.  Diagnostics go to
stderr; data outputs only to files.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset
from .dataset import (STRUCTURE_SCHEMA, SubjectRecord, find_cohort,
                      format_subject_label, load_image, load_landmarks_csv,
                      parse_subject_label, save_image, save_registered,
                      select_reference, standardize_orientation)
from .errors import DegenerateInput, EmptyInput, ReferenceNotFound
from .geometry import EllipseParams, sample_boundary
from .hulls import build_structure_map
from .metrics import (avg_min_euclidean, hausdorff, polygon_dsc,
                      significance_stars, ssim, wilcoxon_signed_rank)
from .phantom import PhantomSpec, generate_cohort
from .registration import (RefineConfig, RegistrationMethod, run_method,
                           subject_ellipse)
from .segmentation import fallback_skull_mask, save_mask
from .transform import ellipse_to_canonical

_METHOD_ALIASES = {
    "e": "ellipse",
    "e+a": "ellipse_affine",
    "ea": "ellipse_affine",
    "aff": "affine",
    "aff+i": "affine_init",
    "affi": "affine_init",
}

ORIGINAL = "original"  # unregistered baseline used by evaluate/report


@dataclass
class PipelineConfig:
    """Resolved settings shared by the pipeline commands."""

    input: Path = Path(".")
    output: Path = Path("out")
    reference_id: str = "10"
    methods: list[RegistrationMethod] = field(
        default_factory=lambda: [RegistrationMethod.ELLIPSE,
                                 RegistrationMethod.ELLIPSE_AFFINE])
    refine: RefineConfig = field(default_factory=RefineConfig)
    alpha: float | str = "auto"
    jobs: int = 1
    seed: int = 7
    keep_going: bool = False
    image_format: str = "png"
    map_method: str = "ellipse_affine"


def parse_methods(text: str) -> list[RegistrationMethod]:
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        if not token:
            continue
        token = _METHOD_ALIASES.get(token, token)
        try:
            method = RegistrationMethod(token)
        except ValueError:
            valid = ", ".join(m.value for m in RegistrationMethod)
            raise ValueError(f"unknown method '{token}' (valid: {valid})")
        if method not in out:
            out.append(method)
    if not out:
        raise ValueError("method list is empty")
    return out


def parse_alpha(text: str):
    if text == "auto":
        return "auto"
    value = float(text)
    if value < 0:
        raise ValueError("alpha must be >= 0 or 'auto'")
    return value


def read_config_file(path) -> dict[str, str]:
    """Parse an explicit ``key = value`` text config."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower().replace("-", "_")] = value.strip()
    return out


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "input", None) is not None:
        cfg.input = Path(args.input)
    if getattr(args, "output", None) is not None:
        cfg.output = Path(args.output)
    for name in ("reference_id", "jobs", "seed", "keep_going", "map_method"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "methods", None) is not None:
        cfg.methods = parse_methods(args.methods)
    if getattr(args, "alpha", None) is not None:
        cfg.alpha = parse_alpha(args.alpha)
    if getattr(args, "format", None) is not None:
        cfg.image_format = args.format
    refine_kwargs = {}
    for arg_name, cfg_name in (("refine_iters", "max_iters"),
                               ("refine_levels", "pyramid_levels"),
                               ("refine_step", "step_size"),
                               ("refine_tol", "convergence_tol")):
        value = getattr(args, arg_name, None)
        if value is not None:
            refine_kwargs[cfg_name] = value
    if refine_kwargs:
        cfg.refine = replace(cfg.refine, **refine_kwargs)
    if cfg.jobs < 1:
        raise ValueError("--jobs must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# synth

def default_spec_for_frame(width: int, height: int, speckle: float,
                           seed: int) -> PhantomSpec:
    skull = EllipseParams(0.29 * width, 0.28 * height,
                          width / 2.0, height / 2.0, 0.0)
    return PhantomSpec(width=width, height=height, skull=skull,
                       ring_thickness=max(4.0, 0.015 * width),
                       speckle_sigma=speckle, seed=seed)


def synth_cohort(out_dir: Path, count: int, width: int, height: int,
                 seed: int, speckle: float, reference_id: int,
                 max_rotation_deg: float = 15.0,
                 scale_range: tuple[float, float] = (0.9, 1.1),
                 max_shift: tuple[float, float] | None = None,
                 brain_offset_sigma: float | None = None) -> list[Path]:
    """Write a phantom cohort (images, landmark CSVs, masks, truth table)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    base = default_spec_for_frame(width, height, speckle, seed)
    if max_shift is None:
        max_shift = (0.05 * width, 0.037 * height)
    if brain_offset_sigma is None:
        brain_offset_sigma = 0.015 * width
    cohort = generate_cohort(
        count, base, seed=seed, max_rotation_deg=max_rotation_deg,
        scale_range=scale_range, max_shift=max_shift,
        brain_offset_sigma=brain_offset_sigma,
        structure_jitter_sigma=0.3 * brain_offset_sigma,
        identity_id=reference_id if 1 <= reference_id <= count else None)
    paths = []
    truth_rows = []
    for record, truth, skull in cohort:
        label = record.label
        paths.append(save_image(record.image * 255.0, out_dir / f"{label}.png"))
        paths.append(dataset.save_landmarks_csv(record.landmarks,
                                                out_dir / f"{label}.csv"))
        paths.append(save_mask(record.skull_mask, out_dir / f"{label}_mask.png"))
        truth_rows.append([label]
                          + [repr(float(v)) for v in
                             (skull.a, skull.b, skull.x0, skull.y0, skull.theta)]
                          + [repr(float(v)) for v in truth.m.ravel()])
    truth_path = out_dir / "truth.csv"
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "a", "b", "x0", "y0", "theta"]
                        + [f"m{i}{j}" for i in range(3) for j in range(3)])
        writer.writerows(truth_rows)
    paths.append(truth_path)
    return paths


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    try:
        width, height = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must look like 800x540, got '{args.size}'")
    ref_id, _ = parse_subject_label(cfg.reference_id)
    synth_cohort(cfg.output, args.count, width, height, cfg.seed,
                 args.speckle, ref_id)
    print(f"wrote {args.count} subjects to {cfg.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# segment / fit

def _prepared_cohort(cfg: PipelineConfig) -> list[SubjectRecord]:
    cohort = find_cohort(cfg.input)
    if not cohort:
        raise FileNotFoundError(f"no subjects found in {cfg.input}")
    return [standardize_orientation(rec)[0] for rec in cohort]


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    cohort = _prepared_cohort(cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    for record in cohort:
        mask = fallback_skull_mask(record.image)
        save_mask(mask, cfg.output / f"{record.label}_mask.png")
    print(f"wrote {len(cohort)} masks to {cfg.output}", file=sys.stderr)
    return 0


def _paint_ellipse(img: np.ndarray, params: EllipseParams) -> np.ndarray:
    out = np.clip(img, 0, 255).copy()
    boundary = sample_boundary(params, 720)
    xs = np.rint(boundary[:, 0]).astype(int)
    ys = np.rint(boundary[:, 1]).astype(int)
    keep = (xs >= 0) & (xs < out.shape[1]) & (ys >= 0) & (ys < out.shape[0])
    out[ys[keep], xs[keep]] = 255.0
    cx, cy = int(round(params.x0)), int(round(params.y0))
    out[max(cy - 3, 0):cy + 4, max(cx, 0):cx + 1] = 255.0
    out[max(cy, 0):cy + 1, max(cx - 3, 0):cx + 4] = 255.0
    return out


def cmd_fit(args: argparse.Namespace) -> int:
    from .registration import subject_mask_points
    from .geometry import robust_fit_ellipse

    cfg = config_from_args(args)
    cohort = _prepared_cohort(cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    rows = []
    for record in cohort:
        pts = subject_mask_points(record)
        report = robust_fit_ellipse(pts)
        p = report.params
        rows.append([record.label]
                    + [repr(float(v)) for v in (p.a, p.b, p.x0, p.y0, p.theta)]
                    + [len(pts), int(report.inlier_mask.sum()),
                       report.converged])
        save_image(_paint_ellipse(record.image, p),
                   cfg.output / f"{record.label}_fit.png")
    with open(cfg.output / "fits.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "a", "b", "x0", "y0", "theta",
                         "n_points", "n_inliers", "converged"])
        writer.writerows(rows)
    print(f"fitted {len(rows)} subjects", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# register

def _register_subject(subject: SubjectRecord, reference: SubjectRecord,
                      ref_params: EllipseParams,
                      methods: list[RegistrationMethod],
                      refine: RefineConfig):
    """All requested methods for one subject; the robust moving-ellipse fit
    is shared between the variants that need it."""
    results = {}
    moving_params = None
    for method in methods:
        if method in (RegistrationMethod.ELLIPSE,
                      RegistrationMethod.ELLIPSE_AFFINE) \
                and moving_params is None:
            moving_params = subject_ellipse(subject)
        results[method] = run_method(method, subject, reference, refine,
                                     reference_params=ref_params,
                                     subject_params=moving_params)
    return results


def register_cohort(cfg: PipelineConfig) -> Path:
    """Register every non-reference subject with every requested method.

    Outputs land under ``cfg.output``: one directory per method plus a
    ``reference`` directory holding the reference centred by its own skull
    ellipse, and a ``manifest.csv`` run log.  All saved rasters, landmark
    CSVs and transform files live in the reference's canonical frame.
    """
    cohort = _prepared_cohort(cfg)
    ref_id, ref_scan = parse_subject_label(cfg.reference_id)
    reference = select_reference(cohort, ref_id, ref_scan)
    ref_params = subject_ellipse(reference)
    w, h = reference.width, reference.height
    canon_ref = ellipse_to_canonical(ref_params, w, h)

    from .registration import RegistrationResult
    ref_result = RegistrationResult(transform=canon_ref, loss_trace=[],
                                    method=RegistrationMethod.ELLIPSE)
    save_registered(reference, ref_result, cfg.output / "reference",
                    image_format=cfg.image_format)

    subjects = [r for r in cohort
                if (r.subject_id, r.scan_index) != (ref_id, ref_scan)]
    manifest_rows = []

    def work(subject):
        return _register_subject(subject, reference, ref_params,
                                 cfg.methods, cfg.refine)

    if cfg.jobs > 1 and len(subjects) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_register_worker,
                                     [(s, reference, ref_params, cfg.methods,
                                       cfg.refine) for s in subjects]))
        if not cfg.keep_going:
            for outcome in outcomes:
                if isinstance(outcome, Exception):
                    raise outcome
    else:
        outcomes = []
        for subject in subjects:
            try:
                outcomes.append(work(subject))
            except Exception as exc:  # noqa: BLE001 - per-subject isolation
                if not cfg.keep_going:
                    raise
                outcomes.append(exc)

    for subject, outcome in zip(subjects, outcomes):
        if isinstance(outcome, Exception):
            manifest_rows.append([subject.label, "-", "error",
                                  0, "", "", str(outcome)])
            continue
        for method, result in outcome.items():
            save_registered(subject, result, cfg.output / method.value,
                            output_frame=canon_ref,
                            image_format=cfg.image_format)
            trace = result.loss_trace
            manifest_rows.append([
                subject.label, method.value,
                "converged" if result.converged else "max_iters",
                max(len(trace) - 1, 0),
                repr(float(trace[0])) if trace else "",
                repr(float(trace[-1])) if trace else "", ""])

    manifest = cfg.output / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "method", "status", "accepted_steps",
                         "initial_loss", "final_loss", "error"])
        writer.writerows(manifest_rows)
    return manifest


def _register_worker(packed):
    subject, reference, ref_params, methods, refine = packed
    try:
        return _register_subject(subject, reference, ref_params,
                                 methods, refine)
    except Exception as exc:  # noqa: BLE001 - reported via manifest
        return exc


def cmd_register(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    manifest = register_cohort(cfg)
    print(f"wrote {manifest}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# maps

def _label_sort_key(label: str):
    return parse_subject_label(label)


def _registered_landmarks(reg_dir: Path, method: str) -> dict[str, dict]:
    out = {}
    for path in sorted((reg_dir / method).glob("*_registered.csv"),
                       key=lambda p: _label_sort_key(p.stem.removesuffix("_registered"))):
        out[path.stem.removesuffix("_registered")] = load_landmarks_csv(path)
    return out


def build_maps(cfg: PipelineConfig) -> list[Path]:
    """Probability maps for every structure with more than 2 landmarks."""
    reg_dir = cfg.input
    ref_paths = sorted((reg_dir / "reference").glob("*_registered.png"))
    if not ref_paths:
        raise FileNotFoundError(
            f"{reg_dir}/reference holds no registered reference image; "
            "run 'register' first")
    ref_img = load_image(ref_paths[0])
    h, w = ref_img.shape
    landmarks = _registered_landmarks(reg_dir, cfg.map_method)
    if not landmarks:
        raise FileNotFoundError(
            f"no registered landmark CSVs under {reg_dir}/{cfg.map_method}")
    out_dir = cfg.output
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    skip_rows = []
    labels = list(landmarks)
    for structure, count in STRUCTURE_SCHEMA.items():
        if count <= 2:
            print(f"skipping '{structure}': needs more than 2 landmarks",
                  file=sys.stderr)
            continue
        pmap, skipped = build_structure_map(
            [landmarks[lb] for lb in labels], structure, w, h, cfg.alpha)
        for idx, reason in skipped:
            skip_rows.append([structure, labels[idx], reason])
        gray = np.rint(255.0 * pmap.data)
        written.append(save_image(gray, out_dir / f"{structure}.png"))
        grid_path = out_dir / f"{structure}.csv"
        with open(grid_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in pmap.data:
                writer.writerow([repr(float(v)) for v in row])
        written.append(grid_path)
        written.append(_save_overlay(ref_img, pmap.data,
                                     out_dir / f"{structure}_overlay.png"))
    with open(out_dir / "skips.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["structure", "label", "reason"])
        writer.writerows(skip_rows)
    return written


def _save_overlay(gray_ref: np.ndarray, prob: np.ndarray, path: Path) -> Path:
    """Heat overlay: probability shown as a red-yellow veil over the image."""
    from PIL import Image

    base = np.clip(gray_ref, 0, 255)
    r = base + (255.0 - base) * prob
    g = base + (160.0 - base) * prob * 0.6
    b = base * (1.0 - 0.85 * prob)
    rgb = np.stack([r, g, b], axis=-1)
    Image.fromarray(np.clip(np.rint(rgb), 0, 255).astype(np.uint8),
                    mode="RGB").save(path)
    return path


def cmd_maps(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    written = build_maps(cfg)
    print(f"wrote {len(written)} map files to {cfg.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# evaluate

_POINT_METRICS = ("hausdorff", "avg_min_euclidean")


def evaluate_cohort(cfg: PipelineConfig, reg_dir: Path | None = None) -> tuple[Path, Path]:
    """Metric tables for every (subject, method, structure) plus the
    unregistered baseline, and pairwise signed-rank comparisons."""
    cohort = {r.label: r for r in _prepared_cohort(cfg)}
    reg_dir = cfg.output if reg_dir is None else reg_dir
    ref_id, ref_scan = parse_subject_label(cfg.reference_id)
    ref_label = format_subject_label(ref_id, ref_scan)
    if ref_label not in cohort:
        raise ReferenceNotFound(f"reference '{ref_label}' not in {cfg.input}")
    ref_csv = reg_dir / "reference" / f"{ref_label}_registered.csv"
    if not ref_csv.exists():
        raise FileNotFoundError(f"{ref_csv} missing; run 'register' first")
    ref_lm = load_landmarks_csv(ref_csv)
    ref_img = load_image(reg_dir / "reference" / f"{ref_label}_registered.png")
    h, w = ref_img.shape

    methods = [m.value for m in cfg.methods] + [ORIGINAL]
    subject_labels = sorted((lb for lb in cohort if lb != ref_label),
                            key=_label_sort_key)
    rows = []
    values: dict[tuple[str, str, str], dict[str, float]] = {}

    for label in subject_labels:
        record = cohort[label]
        sid, scan = parse_subject_label(label)
        for method in methods:
            if method == ORIGINAL:
                lm = record.landmarks
                img = record.image
            else:
                lm_path = reg_dir / method / f"{label}_registered.csv"
                if not lm_path.exists():
                    raise FileNotFoundError(
                        f"{lm_path} missing; was 'register' run with "
                        f"method '{method}'?")
                lm = load_landmarks_csv(lm_path)
                img = load_image(reg_dir / method / f"{label}_registered.png")
            for structure in STRUCTURE_SCHEMA:
                if structure not in lm or structure not in ref_lm:
                    continue
                d_h = hausdorff(lm[structure], ref_lm[structure])
                d_e = avg_min_euclidean(lm[structure], ref_lm[structure])
                entries = {"hausdorff": d_h, "avg_min_euclidean": d_e}
                if STRUCTURE_SCHEMA[structure] > 2:
                    try:
                        entries["polygon_dsc"] = polygon_dsc(
                            lm[structure], ref_lm[structure], w, h, cfg.alpha)
                    except (DegenerateInput, EmptyInput) as exc:
                        print(f"{label}/{method}/{structure}: no DSC ({exc})",
                              file=sys.stderr)
                for metric, value in entries.items():
                    rows.append([sid, scan, method, structure, metric,
                                 repr(float(value))])
                    values.setdefault((method, structure, metric),
                                      {})[label] = value
            score = ssim(img, ref_img, data_range=255.0)
            rows.append([sid, scan, method, "image", "ssim",
                         repr(float(score))])
            values.setdefault((method, "image", "ssim"), {})[label] = score

    out_dir = cfg.output
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "scan_index", "method", "structure",
                         "metric", "value"])
        writer.writerows(rows)

    # Comparisons pair the requested methods; the unregistered baseline is a
    # metrics-table row only, so a single-method run has nothing to compare.
    compared = [m.value for m in cfg.methods]
    comp_path = out_dir / "comparisons.csv"
    with open(comp_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method_a", "method_b", "metric", "structure",
                         "p_value", "stars"])
        metric_keys = sorted({(m, s) for (_, s, m) in values})
        for metric, structure in metric_keys:
            for i, method_a in enumerate(compared):
                for method_b in compared[i + 1:]:
                    va = values.get((method_a, structure, metric))
                    vb = values.get((method_b, structure, metric))
                    if not va or not vb:
                        continue
                    common = [lb for lb in subject_labels
                              if lb in va and lb in vb]
                    try:
                        p = wilcoxon_signed_rank(
                            np.array([va[lb] for lb in common]),
                            np.array([vb[lb] for lb in common]))
                        stars = significance_stars(p)
                        p_text = repr(float(p))
                    except Exception:
                        p_text, stars = "", "na"
                    writer.writerow([method_a, method_b, metric, structure,
                                     p_text, stars])
    return metrics_path, comp_path


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    reg_dir = Path(args.registrations) if args.registrations else cfg.output
    metrics_path, comp_path = evaluate_cohort(cfg, reg_dir)
    print(f"wrote {metrics_path} and {comp_path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# report

def write_report(eval_dir: Path, out_dir: Path) -> list[Path]:
    """Boxplot figures per (metric, structure) and a markdown median table."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics_path = eval_dir / "metrics.csv"
    if not metrics_path.exists():
        raise FileNotFoundError(f"{metrics_path} missing; run 'evaluate' first")
    data: dict[tuple[str, str], dict[str, list[float]]] = {}
    with open(metrics_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["metric"], row["structure"])
            data.setdefault(key, {}).setdefault(row["method"], []).append(
                float(row["value"]))
    stars: dict[tuple[str, str], list[tuple[str, str, str]]] = {}
    comp_path = eval_dir / "comparisons.csv"
    if comp_path.exists():
        with open(comp_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                stars.setdefault((row["metric"], row["structure"]), []).append(
                    (row["method_a"], row["method_b"], row["stars"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    lines = ["# Registration evaluation", ""]
    for (metric, structure), per_method in sorted(data.items()):
        methods = list(per_method)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.boxplot([per_method[m] for m in methods], tick_labels=methods)
        ax.set_title(f"{metric} - {structure}")
        ax.set_ylabel("px" if metric in _POINT_METRICS else metric)
        pair_text = "   ".join(f"{a} vs {b}: {s}"
                               for a, b, s in stars.get((metric, structure), []))
        if pair_text:
            ax.set_xlabel(pair_text, fontsize=7)
        fig.tight_layout()
        fig_path = out_dir / f"{metric}_{structure}.png"
        fig.savefig(fig_path, dpi=110)
        plt.close(fig)
        written.append(fig_path)
        lines.append(f"## {metric} - {structure}")
        lines.append("")
        lines.append("| method | median | mean |")
        lines.append("|---|---|---|")
        for m in methods:
            vals = np.array(per_method[m])
            lines.append(f"| {m} | {np.median(vals):.4g} | {vals.mean():.4g} |")
        lines.append("")
    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(report_path)
    return written


def cmd_report(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    written = write_report(cfg.input, cfg.output)
    print(f"wrote {len(written)} report files to {cfg.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point

class UsageError(ValueError):
    """Raised for bad command-line values after parsing."""


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--input", help="input directory")
    sub.add_argument("--output", help="output directory")
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--reference-id", dest="reference_id",
                     help="reference subject label (default 10)")
    sub.add_argument("--methods", help="comma-separated registration methods "
                     "(ellipse, ellipse_affine, affine, affine_init)")
    sub.add_argument("--alpha", help="concave-hull alpha, or 'auto'")
    sub.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    sub.add_argument("--seed", type=int, help="random seed (default 7)")
    sub.add_argument("--keep-going", dest="keep_going", action="store_true",
                     default=None, help="skip failing subjects instead of aborting")
    sub.add_argument("--format", choices=("png", "jpeg"),
                     help="registered image format (default png)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fetalign",
        description="Skull-ellipse based coarse registration pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a phantom cohort")
    _add_common(p)
    p.add_argument("--count", "-n", type=int, default=50,
                   help="number of subjects (default 50)")
    p.add_argument("--size", default="800x540",
                   help="frame size WxH (default 800x540)")
    p.add_argument("--speckle", type=float, default=0.1,
                   help="multiplicative speckle sigma (default 0.1)")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("segment", help="fallback skull masks")
    _add_common(p)
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("fit", help="robust skull-ellipse fits + overlays")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("register", help="register cohort to the reference")
    _add_common(p)
    p.add_argument("--refine-iters", dest="refine_iters", type=int,
                   help="refinement iterations per pyramid level (default 100)")
    p.add_argument("--refine-levels", dest="refine_levels", type=int,
                   help="pyramid levels (default 3)")
    p.add_argument("--refine-step", dest="refine_step", type=float,
                   help="initial line-search step in pixels (default 2.0)")
    p.add_argument("--refine-tol", dest="refine_tol", type=float,
                   help="relative loss decrease stopping a level (default 1e-7)")
    p.set_defaults(func=cmd_register)

    p = subs.add_parser("maps", help="per-structure probability maps")
    _add_common(p)
    p.add_argument("--map-method", dest="map_method",
                   help="registration method whose outputs feed the maps "
                        "(default ellipse_affine)")
    p.set_defaults(func=cmd_maps)

    p = subs.add_parser("evaluate", help="metric tables + comparisons")
    _add_common(p)
    p.add_argument("--registrations", help="registration output directory "
                   "(defaults to --output)")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("report", help="figures + markdown summary")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config_file(args: argparse.Namespace):
    if getattr(args, "config", None) is None:
        return
    file_values = read_config_file(args.config)
    casts = {"jobs": int, "seed": int, "count": int,
             "speckle": float, "refine_iters": int, "refine_levels": int,
             "refine_step": float, "refine_tol": float,
             "keep_going": lambda s: s.lower() in ("1", "true", "yes")}
    for key, raw in file_values.items():
        if key == "method":
            key = "methods"
        if not hasattr(args, key):
            continue
        if getattr(args, key) is not None and key in _explicit_args:
            continue
        value = casts.get(key, str)(raw)
        setattr(args, key, value)


_explicit_args: set[str] = set()


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    # Track which options were given explicitly so config values don't
    # override them.
    global _explicit_args
    _explicit_args = {token.lstrip("-").replace("-", "_").split("=")[0]
                      for token in argv if token.startswith("--")}
    try:
        _apply_config_file(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
