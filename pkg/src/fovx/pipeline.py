"""Batch pipeline stages and their on-disk manifests.

Stages communicate only via directories: each stage reads its
predecessor's manifest.json, writes per-sample files plus its own
manifest, and forwards the bookkeeping later stages need, so any stage
can be inspected or rerun in isolation. All randomness is derived from
(seed, index) pairs, making every stage reproducible byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import bcstats, extent, fovsim, inpaint, metrics, phantom, raster

LOG = logging.getLogger("fovx")

SCHEMA_VERSION = 1

SEVERITY_ORDER = [lvl.value for lvl in metrics.SeverityLevel]

# above this TCI the visible outline is mostly manufactured by the cut
# and extent fits are not trusted on their own (fits below this line
# track the true extent; above it they undershoot often enough that
# the frame-floor fallback must back them up)
UNRELIABLE_TCI = 0.65
TRUNCATED_SEVERITIES = SEVERITY_ORDER[1:]  # everything except "none"


# ---------------------------------------------------------------------------
# manifest plumbing
# ---------------------------------------------------------------------------


def fresh_dir(out_dir: str | Path, force: bool = False) -> Path:
    """Create an output directory, refusing to reuse one unless forced."""
    out = Path(out_dir)
    if out.exists():
        if not force:
            raise FileExistsError(
                f"output directory {out} already exists; pass force/--force to overwrite"
            )
        shutil.rmtree(out)
    out.mkdir(parents=True)
    return out


def dump_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def load_manifest(in_dir: str | Path, kind: str) -> dict[str, Any]:
    path = Path(in_dir) / "manifest.json"
    if not path.is_file():
        raise ValueError(f"{in_dir} has no manifest.json (expected a {kind} stage directory)")
    man = load_json(path)
    if man.get("kind") != kind:
        raise ValueError(f"{path} is a {man.get('kind')!r} manifest, expected {kind!r}")
    if man.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {man.get('schema_version')!r}")
    return man


def _check_record_dirs(out: Path, records: Sequence[dict[str, Any]]) -> None:
    for rec in records:
        d = rec.get("dir")
        if d is not None and not (out / d).is_dir():
            raise OSError(f"manifest references missing directory {d}")


def _write_manifest(out: Path, manifest: dict[str, Any]) -> None:
    _check_record_dirs(out, manifest.get("records", ()))
    dump_json(out / "manifest.json", manifest)


def _fmt_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt_cell(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _bbox_list(b: metrics.BBox) -> list[float]:
    return [b.x_min, b.y_min, b.x_max, b.y_max]


def _bbox_from(vals: Sequence[float]) -> metrics.BBox:
    return metrics.BBox(*vals)


def _map_jobs(fn: Callable[[Any], Any], items: Sequence[Any], jobs: int) -> list[Any]:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# stage: phantom corpus
# ---------------------------------------------------------------------------


def run_phantom(
    out_dir: str | Path,
    count: int,
    seed: int = 0,
    dim: int = 256,
    spacing: float = 1.5,
    force: bool = False,
) -> dict[str, Any]:
    """Generate a corpus of complete phantom slices with truth masks."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    out = fresh_dir(out_dir, force)
    records: list[dict[str, Any]] = []
    px_cm2 = (spacing / 10.0) ** 2
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        ph = phantom.generate_phantom(rng, dim=dim, spacing=spacing)
        rel = f"phantoms/phantom_{i:05d}"
        d = out / rel
        d.mkdir(parents=True)
        raster.write_image(d / "image.pgm", ph.image)
        raster.write_mask(d / "body.pgm", ph.body)
        raster.write_mask(d / "sat.pgm", ph.sat)
        raster.write_mask(d / "muscle.pgm", ph.muscle)
        records.append(
            {
                "index": i,
                "dir": rel,
                "spec": ph.spec.to_dict(),
                "sat_area_cm2": ph.sat.count() * px_cm2,
                "muscle_area_cm2": ph.muscle.count() * px_cm2,
            }
        )
        LOG.debug("phantom %d written to %s", i, d)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "phantom",
        "count": count,
        "seed": seed,
        "dim": dim,
        "spacing": spacing,
        "records": records,
    }
    _write_manifest(out, manifest)
    LOG.info("phantom stage: %d slices in %s", count, out)
    return manifest


# ---------------------------------------------------------------------------
# stage: truncation simulation
# ---------------------------------------------------------------------------


def run_simulate(
    in_dir: str | Path,
    out_dir: str | Path,
    cfg: fovsim.SimConfig,
    per_slice: int = 1,
    validation: bool = False,
    jobs: int = 1,
    force: bool = False,
) -> dict[str, Any]:
    """Draw truncation samples for every complete input slice.

    Validation mode keeps at most cfg.max_per_severity samples per
    severity level per slice; sample numbering is assigned after the
    cap so it is contiguous either way.
    """
    if per_slice < 1:
        raise ValueError(f"per_slice must be >= 1, got {per_slice}")
    src = Path(in_dir)
    src_man = load_manifest(src, "phantom")
    if src_man["dim"] != cfg.dim:
        raise ValueError(
            f"input slices are {src_man['dim']}px but the config expects {cfg.dim}px"
        )
    out = fresh_dir(out_dir, force)

    def _draw(task: tuple[dict[str, Any], int]) -> tuple[int, int, fovsim.TruncationSample, dict]:
        rec, k = task
        pdir = src / rec["dir"]
        img = raster.read_image(pdir / "image.pgm")
        body = raster.read_mask(pdir / "body.pgm")
        if raster.touches_border(body):
            raise ValueError(f"{pdir}: body touches the frame; input slice is not complete")
        rng = np.random.default_rng((cfg.seed, rec["index"], k))
        sample = fovsim.generate_sample(img, body, cfg, rng)
        return rec["index"], k, sample, rec["spec"]["anthro"]

    tasks = [(rec, k) for rec in src_man["records"] for k in range(per_slice)]
    drawn = _map_jobs(_draw, tasks, jobs)

    kept: list[tuple[int, int, fovsim.TruncationSample, dict]] = []
    per_slice_counts: dict[tuple[int, str], int] = {}
    for item in drawn:  # tasks are already in (slice, draw) order
        p_idx, _k, sample, _anthro = item
        if validation:
            key = (p_idx, sample.severity.value)
            if per_slice_counts.get(key, 0) >= cfg.max_per_severity:
                continue
            per_slice_counts[key] = per_slice_counts.get(key, 0) + 1
        kept.append(item)

    records: list[dict[str, Any]] = []
    histogram = {name: 0 for name in SEVERITY_ORDER}
    for idx, (p_idx, k, sample, anthro) in enumerate(kept):
        rel = f"samples/sample_{idx:05d}"
        d = out / rel
        d.mkdir(parents=True)
        raster.write_image(d / "uncorrupted.pgm", sample.uncorrupted)
        raster.write_image(d / "corrupted.pgm", sample.corrupted)
        raster.write_image(d / "cropped.pgm", sample.cropped)
        raster.write_mask(d / "fov.pgm", sample.fov_mask)
        raster.write_mask(d / "body.pgm", sample.body)
        rec = {
            "index": idx,
            "dir": rel,
            "phantom_index": p_idx,
            "draw_index": k,
            "tci": sample.tci,
            "severity": sample.severity.value,
            "fov_spec": sample.spec.to_dict(),
            "aug": {
                "scale": sample.aug.scale,
                "rotation_deg": sample.aug.rotation_deg,
                "translate_x": sample.aug.translate_x,
                "translate_y": sample.aug.translate_y,
            },
            "gt_bbox": _bbox_list(sample.gt_bbox),
            "gt_bbox_cropped_space": _bbox_list(sample.gt_bbox_cropped_space),
            "anthro": anthro,
        }
        dump_json(d / "sample.json", rec)
        records.append(rec)
        histogram[sample.severity.value] += 1

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulate",
        "config": json.loads(cfg.to_json()),
        "per_slice": per_slice,
        "validation": validation,
        "n_input_slices": len(src_man["records"]),
        "n_samples": len(records),
        "severity_histogram": histogram,
        "records": records,
    }
    _write_manifest(out, manifest)
    LOG.info(
        "simulate stage: %d samples (%s) in %s",
        len(records),
        ", ".join(f"{k}={v}" for k, v in histogram.items()),
        out,
    )
    return manifest


# ---------------------------------------------------------------------------
# stage: border extension
# ---------------------------------------------------------------------------


def run_extend(
    in_dir: str | Path,
    out_dir: str | Path,
    r0: float = extent.DEFAULT_R0,
    force: bool = False,
) -> dict[str, Any]:
    """Estimate body extent and extend borders for every truncated sample.

    Untruncated samples (severity none) pass through with ratio 1.
    When the estimate is low-confidence (no usable fit, or no visible
    body at all) or most of the outline is manufactured by the cut
    (TCI at or above the reliability limit), the estimated ratio is
    floored at the ratio that re-exposes the entire pre-crop
    reconstruction frame: the source slice lived inside that frame, so
    undoing the display crop is a guaranteed-sufficient fallback.
    """
    src = Path(in_dir)
    src_man = load_manifest(src, "simulate")
    out = fresh_dir(out_dir, force)

    records: list[dict[str, Any]] = []
    n_truncated = 0
    n_covered = 0
    for rec in src_man["records"]:
        sdir = src / rec["dir"]
        cropped = raster.read_image(sdir / "cropped.pgm")
        spec = fovsim.FovSpec.from_dict(rec["fov_spec"])
        dim = cropped.width
        fov_c = fovsim.cropped_fov_mask(spec, dim)
        tr = fovsim.crop_transform(spec, dim)
        gt_box = _bbox_from(rec["gt_bbox_cropped_space"])

        flags: list[str] = []
        pred_bbox: list[float] | None = None
        residual: float | None = None
        low_confidence = False
        if rec["tci"] > 0.0:
            r_est = 1.0
            trust_fit = rec["tci"] < UNRELIABLE_TCI
            visible = raster.extract_body_mask(cropped)
            if visible.bits.any() and trust_fit:
                est = extent.predict_body_bbox(cropped, visible, fov_c)
                pred_bbox = _bbox_list(est.bbox)
                low_confidence = est.low_confidence
                residual = est.residual
                r_est = extent.extension_ratio(est.bbox, dim, dim, 1.0)
            elif not visible.bits.any():
                flags.append("no-visible-body")
                low_confidence = True
            if low_confidence or not trust_fit:
                # the source slice lived inside the pre-crop frame, so a
                # fit claiming more than the frame is an overshoot and a
                # missing or distrusted fit is floored by the frame
                frame_box = metrics.BBox(
                    (0.0 - tr.x0) * tr.scale,
                    (0.0 - tr.y0) * tr.scale,
                    (dim - tr.x0) * tr.scale,
                    (dim - tr.y0) * tr.scale,
                )
                frame_est = extent.extension_ratio(frame_box, dim, dim, 1.0)
                if frame_est > r_est:
                    r_est = frame_est
                    flags.append("frame-floor")
            requested = r0 * r_est
        else:
            requested = 1.0

        ext = extent.extend_border(cropped, fov_c, requested, fill=fovsim.WINDOW_FLOOR_HU)
        covered = ext.covers(gt_box)
        if rec["tci"] > 0.0:
            n_truncated += 1
            n_covered += covered

        rel = f"samples/sample_{rec['index']:05d}"
        d = out / rel
        d.mkdir(parents=True)
        raster.write_image(d / "extended.pgm", ext.extended_image)
        raster.write_mask(d / "extended_fov.pgm", ext.extended_fov)
        erec = {
            "index": rec["index"],
            "dir": rel,
            "tci": rec["tci"],
            "severity": rec["severity"],
            "r0": r0,
            "r_est": requested / r0 if rec["tci"] > 0.0 else 1.0,
            "requested_ratio": requested,
            "ratio": ext.ratio,
            "orig_dim": ext.orig_dim,
            "padded_dim": ext.padded_dim,
            "pad_left": ext.pad_left,
            "crop": {"x0": tr.x0, "y0": tr.y0, "scale": tr.scale},
            "predicted_bbox": pred_bbox,
            "low_confidence": low_confidence,
            "fit_residual": residual,
            "covered": covered,
            "flags": flags,
        }
        dump_json(d / "extend.json", erec)
        records.append(erec)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "extend",
        "r0": r0,
        "n_samples": len(records),
        "n_truncated": n_truncated,
        "coverage_rate": (n_covered / n_truncated) if n_truncated else None,
        "records": records,
    }
    _write_manifest(out, manifest)
    LOG.info(
        "extend stage: %d samples, coverage %s in %s",
        len(records),
        manifest["coverage_rate"],
        out,
    )
    return manifest


# ---------------------------------------------------------------------------
# stage: harmonic completion
# ---------------------------------------------------------------------------


def run_complete(
    in_dir: str | Path,
    out_dir: str | Path,
    cfg: inpaint.SolverConfig = inpaint.SolverConfig(),
    truth_dir: str | Path | None = None,
    jobs: int = 1,
    force: bool = False,
) -> dict[str, Any]:
    """Inpaint every extended sample; forwards geometry for evaluation.

    When truth_dir points at the originating simulate stage, each record
    also carries body-region pixel RMSE before and after completion, and
    the manifest summarizes the improvement.
    """
    src = Path(in_dir)
    src_man = load_manifest(src, "extend")
    truth_by_idx: dict[int, dict[str, Any]] = {}
    truth_root: Path | None = None
    if truth_dir is not None:
        truth_root = Path(truth_dir)
        truth_man = load_manifest(truth_root, "simulate")
        truth_by_idx = {r["index"]: r for r in truth_man["records"]}
    out = fresh_dir(out_dir, force)

    def _one(rec: dict[str, Any]) -> dict[str, Any]:
        edir = src / rec["dir"]
        ext_img = raster.read_image(edir / "extended.pgm")
        ext_fov = raster.read_mask(edir / "extended_fov.pgm")
        ext = extent.ExtensionResult(
            extended_image=ext_img,
            extended_fov=ext_fov,
            ratio=rec["ratio"],
            new_spacing=ext_img.spacing,
            requested_ratio=rec["requested_ratio"],
            orig_dim=rec["orig_dim"],
            padded_dim=rec["padded_dim"],
            pad_left=rec["pad_left"],
        )
        completed, res = inpaint.complete_with_diagnostics(ext, cfg)
        rel = rec["dir"]
        d = out / rel
        d.mkdir(parents=True)
        raster.write_image(d / "completed.pgm", completed)
        crec = {
            "index": rec["index"],
            "dir": rel,
            "tci": rec["tci"],
            "severity": rec["severity"],
            "iters": res.iters,
            "residual": res.residual,
            "solver_flags": list(res.flags),
            "ratio": rec["ratio"],
            "orig_dim": rec["orig_dim"],
            "padded_dim": rec["padded_dim"],
            "pad_left": rec["pad_left"],
            "crop": rec["crop"],
            "covered": rec["covered"],
            "low_confidence": rec["low_confidence"],
        }
        if truth_root is not None:
            srec = truth_by_idx.get(rec["index"])
            if srec is None:
                raise ValueError(f"sample {rec['index']} missing from the simulate manifest")
            sdir = truth_root / srec["dir"]
            truth = raster.read_image(sdir / "uncorrupted.pgm")
            corrupted = raster.read_image(sdir / "corrupted.pgm")
            fov = raster.read_mask(sdir / "fov.pgm")
            body = raster.read_mask(sdir / "body.pgm")
            mapped = _map_completed_to_original(
                completed,
                rec["crop"],
                rec["pad_left"],
                rec["padded_dim"],
                truth.width,
                fill=fovsim.WINDOW_FLOOR_HU,
            )
            vals = np.where(fov.bits, corrupted.values, mapped)
            vals = np.clip(vals, fovsim.WINDOW_FLOOR_HU, fovsim.WINDOW_CEIL_HU)
            comp_orig = raster.ImageGrid(vals, spacing=truth.spacing)
            crec["rmse_trunc"] = metrics.pixel_rmse(corrupted, truth, body)
            crec["rmse_comp"] = metrics.pixel_rmse(comp_orig, truth, body)
        # completed.json is the image sidecar; the stage record gets its own file
        dump_json(d / "complete.json", crec)
        return crec

    records = _map_jobs(_one, src_man["records"], jobs)
    records.sort(key=lambda r: r["index"])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "complete",
        "solver": {
            "tol": cfg.tol,
            "max_iters": cfg.max_iters,
            "max_iters_cap": cfg.max_iters_cap,
            "method": cfg.method,
        },
        "n_samples": len(records),
        "max_residual": max((r["residual"] for r in records), default=0.0),
        "records": records,
    }
    if truth_root is not None and records:
        manifest["mean_rmse_trunc"] = float(np.mean([r["rmse_trunc"] for r in records]))
        manifest["mean_rmse_comp"] = float(np.mean([r["rmse_comp"] for r in records]))
    _write_manifest(out, manifest)
    LOG.info("complete stage: %d samples in %s", len(records), out)
    return manifest


# ---------------------------------------------------------------------------
# stage: evaluation
# ---------------------------------------------------------------------------

_SAMPLE_COLUMNS = [
    "index",
    "phantom_index",
    "tci",
    "severity",
    "covered",
    "low_confidence",
    "pixel_rmse_trunc",
    "pixel_rmse_comp",
    "sat_area_truth",
    "sat_area_trunc",
    "sat_area_comp",
    "muscle_area_truth",
    "muscle_area_trunc",
    "muscle_area_comp",
    "sat_atten_truth",
    "sat_atten_trunc",
    "sat_atten_comp",
    "muscle_atten_truth",
    "muscle_atten_trunc",
    "muscle_atten_comp",
    "dsc_body_trunc",
    "dsc_body_comp",
    "dsc_sat_trunc",
    "dsc_sat_comp",
    "dsc_muscle_trunc",
    "dsc_muscle_comp",
    "height",
    "weight",
    "sex",
    "bmi",
    "fm_index",
    "ffm_index",
    "sat_index_truth",
    "sat_index_trunc",
    "sat_index_comp",
    "muscle_index_truth",
    "muscle_index_trunc",
    "muscle_index_comp",
]

_SUMMARY_METRICS = [
    ("pixel_rmse", "mean"),
    ("dsc_sat", "mean"),
    ("dsc_muscle", "mean"),
    ("sat_area_err", "rmse"),
    ("muscle_area_err", "rmse"),
    ("sat_atten_err", "rmse"),
    ("muscle_atten_err", "rmse"),
]


def _map_completed_to_original(
    completed: raster.ImageGrid,
    crop: dict[str, float],
    pad_left: int,
    padded_dim: int,
    out_dim: int,
    fill: float,
) -> np.ndarray:
    """Resample a completed (extended, cropped) frame back onto original pixels."""
    ke = completed.width / padded_dim
    coords = np.arange(out_dim, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(coords, coords)
    ux = (gx - crop["x0"]) * crop["scale"]
    uy = (gy - crop["y0"]) * crop["scale"]
    vx = (ux + pad_left) * ke
    vy = (uy + pad_left) * ke
    return raster.bilinear_sample(completed.values, vx - 0.5, vy - 0.5, fill=fill)


def _stat_of(values: np.ndarray, how: str) -> float:
    if how == "mean":
        return float(values.mean())
    return float(np.sqrt(np.mean(values**2)))


def _bootstrap_stat_ci(
    values: np.ndarray, how: str, rng: np.random.Generator, n_boot: int
) -> tuple[float, float]:
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    draws = values[idx]
    if how == "mean":
        stats = draws.mean(axis=1)
    else:
        stats = np.sqrt(np.mean(draws**2, axis=1))
    lo, hi = np.quantile(stats, [0.025, 0.975])
    return float(lo), float(hi)


def run_evaluate(
    complete_dir: str | Path,
    sim_dir: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    n_boot: int = 1000,
    force: bool = False,
) -> dict[str, Any]:
    """Compare truncated and completed slices against the uncorrupted truth.

    Emits samples.csv (one row per sample), summary.csv (severity-
    stratified metric means/RMSEs with percentile-bootstrap CIs and
    Bland-Altman agreement for areas), correlations.csv (dependent-
    correlation tests against anthropometric indices), and report.json.
    """
    if n_boot < 1:
        raise ValueError(f"n_boot must be >= 1, got {n_boot}")
    comp_root = Path(complete_dir)
    sim_root = Path(sim_dir)
    comp_man = load_manifest(comp_root, "complete")
    sim_man = load_manifest(sim_root, "simulate")
    sim_by_idx = {r["index"]: r for r in sim_man["records"]}
    out = fresh_dir(out_dir, force)

    rows: list[dict[str, Any]] = []
    for crec in comp_man["records"]:
        srec = sim_by_idx.get(crec["index"])
        if srec is None:
            raise ValueError(f"sample {crec['index']} missing from the simulate manifest")
        sdir = sim_root / srec["dir"]
        cdir = comp_root / crec["dir"]
        truth = raster.read_image(sdir / "uncorrupted.pgm")
        corrupted = raster.read_image(sdir / "corrupted.pgm")
        fov = raster.read_mask(sdir / "fov.pgm")
        body_true = raster.read_mask(sdir / "body.pgm")
        completed_ext = raster.read_image(cdir / "completed.pgm")

        mapped = _map_completed_to_original(
            completed_ext,
            crec["crop"],
            crec["pad_left"],
            crec["padded_dim"],
            truth.width,
            fill=fovsim.WINDOW_FLOOR_HU,
        )
        comp_vals = np.where(fov.bits, corrupted.values, mapped)
        comp_vals = np.clip(comp_vals, fovsim.WINDOW_FLOOR_HU, fovsim.WINDOW_CEIL_HU)
        completed = raster.ImageGrid(comp_vals, spacing=truth.spacing)

        # all three arms are classified inside the same true body region, so
        # area deltas isolate imputation error; the per-arm extracted body
        # masks below feed only the body-footprint DSC columns
        sat_true, muscle_true = bcstats.classify_tissues(truth, body_true)
        sat_trunc, muscle_trunc = bcstats.classify_tissues(corrupted, body_true)
        sat_comp, muscle_comp = bcstats.classify_tissues(completed, body_true)
        body_trunc = raster.extract_body_mask(corrupted)
        body_comp = raster.extract_body_mask(completed)

        m_true = bcstats.measure(sat_true, muscle_true, truth, strict=False)
        m_trunc = bcstats.measure(sat_trunc, muscle_trunc, corrupted, strict=False)
        m_comp = bcstats.measure(sat_comp, muscle_comp, completed, strict=False)

        anthro = bcstats.Anthro(**srec["anthro"])
        ares = bcstats.anthro_ffm_fm(anthro)
        h2 = anthro.height**2

        row = {
            "index": crec["index"],
            "phantom_index": srec["phantom_index"],
            "tci": srec["tci"],
            "severity": srec["severity"],
            "covered": crec["covered"],
            "low_confidence": crec["low_confidence"],
            "pixel_rmse_trunc": metrics.pixel_rmse(corrupted, truth, body_true),
            "pixel_rmse_comp": metrics.pixel_rmse(completed, truth, body_true),
            "sat_area_truth": m_true.sat_area,
            "sat_area_trunc": m_trunc.sat_area,
            "sat_area_comp": m_comp.sat_area,
            "muscle_area_truth": m_true.muscle_area,
            "muscle_area_trunc": m_trunc.muscle_area,
            "muscle_area_comp": m_comp.muscle_area,
            "sat_atten_truth": m_true.sat_atten,
            "sat_atten_trunc": m_trunc.sat_atten,
            "sat_atten_comp": m_comp.sat_atten,
            "muscle_atten_truth": m_true.muscle_atten,
            "muscle_atten_trunc": m_trunc.muscle_atten,
            "muscle_atten_comp": m_comp.muscle_atten,
            "dsc_body_trunc": metrics.dice(body_trunc, body_true),
            "dsc_body_comp": metrics.dice(body_comp, body_true),
            "dsc_sat_trunc": metrics.dice(sat_trunc, sat_true),
            "dsc_sat_comp": metrics.dice(sat_comp, sat_true),
            "dsc_muscle_trunc": metrics.dice(muscle_trunc, muscle_true),
            "dsc_muscle_comp": metrics.dice(muscle_comp, muscle_true),
            "height": anthro.height,
            "weight": anthro.weight,
            "sex": anthro.sex,
            "bmi": anthro.weight / h2,
            "fm_index": ares.fm_index,
            "ffm_index": ares.ffm_index,
            "sat_index_truth": m_true.sat_area / h2,
            "sat_index_trunc": m_trunc.sat_area / h2,
            "sat_index_comp": m_comp.sat_area / h2,
            "muscle_index_truth": m_true.muscle_area / h2,
            "muscle_index_trunc": m_trunc.muscle_area / h2,
            "muscle_index_comp": m_comp.muscle_area / h2,
        }
        rows.append(row)

    rows.sort(key=lambda r: r["index"])
    write_csv(out / "samples.csv", _SAMPLE_COLUMNS, [[r[c] for c in _SAMPLE_COLUMNS] for r in rows])

    # severity-stratified summary with bootstrap CIs
    summary_header = ["severity", "n"]
    for arm in ("trunc", "comp"):
        for name, _how in _SUMMARY_METRICS:
            summary_header += [f"{arm}_{name}", f"{arm}_{name}_ci_lo", f"{arm}_{name}_ci_hi"]
        for tissue in ("sat", "muscle"):
            summary_header += [
                f"{arm}_{tissue}_ba_bias",
                f"{arm}_{tissue}_ba_sd",
                f"{arm}_{tissue}_ba_lo",
                f"{arm}_{tissue}_ba_hi",
            ]

    def _metric_values(sub: list[dict[str, Any]], arm: str, name: str) -> np.ndarray:
        if name == "pixel_rmse":
            return np.asarray([r[f"pixel_rmse_{arm}"] for r in sub])
        if name.startswith("dsc_"):
            return np.asarray([r[f"{name}_{arm}"] for r in sub])
        tissue, quantity, _ = name.split("_")  # e.g. sat_area_err
        vals = []
        for r in sub:
            a = r[f"{tissue}_{quantity}_{arm}"]
            t = r[f"{tissue}_{quantity}_truth"]
            if a is None or t is None:
                continue
            vals.append(a - t)
        return np.asarray(vals, dtype=np.float64)

    strata = [(lvl, [r for r in rows if r["severity"] == lvl]) for lvl in SEVERITY_ORDER]
    strata.append(("all", rows))
    strata.append(("truncated", [r for r in rows if r["severity"] != "none"]))
    summary_rows: list[list[Any]] = []
    for s_i, (label, sub) in enumerate(strata):
        line: list[Any] = [label, len(sub)]
        for arm_i, arm in enumerate(("trunc", "comp")):
            for m_i, (name, how) in enumerate(_SUMMARY_METRICS):
                vals = _metric_values(sub, arm, name)
                if vals.size == 0:
                    line += [None, None, None]
                    continue
                rng = np.random.default_rng((seed, 1, s_i, arm_i, m_i))
                stat = _stat_of(vals, how)
                lo, hi = _bootstrap_stat_ci(vals, how, rng, n_boot)
                line += [stat, lo, hi]
            for tissue in ("sat", "muscle"):
                pairs = [
                    (r[f"{tissue}_area_{arm}"], r[f"{tissue}_area_truth"]) for r in sub
                ]
                if len(pairs) < 2:
                    line += [None, None, None, None]
                    continue
                ba = bcstats.bland_altman(pairs)
                line += [ba.bias, ba.sd, ba.loa_low, ba.loa_high]
        summary_rows.append(line)
    write_csv(out / "summary.csv", summary_header, summary_rows)

    # dependent-correlation reports against anthropometric indices
    corr_header = [
        "test_kind",
        "label",
        "n",
        "r1",
        "r1_ci_lo",
        "r1_ci_hi",
        "r2",
        "r2_ci_lo",
        "r2_ci_hi",
        "z",
        "p_value",
    ]
    corr_rows: list[list[Any]] = []
    corr_notes: list[str] = []

    def _col(name: str) -> list[float]:
        return [r[name] for r in rows]

    corr_specs = [
        (
            "overlapping",
            "sat-index-vs-fm-index:comp-vs-trunc",
            ("fm_index", "sat_index_comp", "sat_index_trunc"),
        ),
        (
            "overlapping",
            "muscle-index-vs-ffm-index:comp-vs-trunc",
            ("ffm_index", "muscle_index_comp", "muscle_index_trunc"),
        ),
        (
            "nonoverlapping",
            "sat-recovery-vs-muscle-recovery",
            ("sat_index_comp", "sat_index_truth", "muscle_index_comp", "muscle_index_truth"),
        ),
    ]
    for kind, label, cols in corr_specs:
        try:
            rep = bcstats.compare_correlations(kind, *[_col(c) for c in cols])
        except ValueError as exc:
            corr_notes.append(f"{label}: skipped ({exc})")
            continue
        corr_rows.append(
            [
                rep.test_kind,
                label,
                rep.n,
                rep.r1,
                rep.ci1[0],
                rep.ci1[1],
                rep.r2,
                rep.ci2[0],
                rep.ci2[1],
                rep.z_stat,
                rep.p_value,
            ]
        )
    write_csv(out / "correlations.csv", corr_header, corr_rows)

    n_trunc_rows = sum(1 for r in rows if r["severity"] != "none")
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "evaluate",
        "n_samples": len(rows),
        "n_truncated": n_trunc_rows,
        "coverage_rate": (
            sum(1 for r in rows if r["severity"] != "none" and r["covered"]) / n_trunc_rows
            if n_trunc_rows
            else None
        ),
        "severity_counts": {
            lvl: sum(1 for r in rows if r["severity"] == lvl) for lvl in SEVERITY_ORDER
        },
        "mean_pixel_rmse_trunc": (
            float(np.mean([r["pixel_rmse_trunc"] for r in rows])) if rows else None
        ),
        "mean_pixel_rmse_comp": (
            float(np.mean([r["pixel_rmse_comp"] for r in rows])) if rows else None
        ),
        "correlation_notes": corr_notes,
        "outputs": ["samples.csv", "summary.csv", "correlations.csv"],
    }
    dump_json(out / "report.json", report)
    LOG.info("evaluate stage: %d samples in %s", len(rows), out)
    return report


# ---------------------------------------------------------------------------
# convenience: all five stages
# ---------------------------------------------------------------------------


def run_pipeline(
    out_root: str | Path,
    n_phantoms: int = 20,
    per_slice: int = 1,
    seed: int = 0,
    dim: int = 256,
    spacing: float = 1.5,
    cfg: fovsim.SimConfig | None = None,
    r0: float = extent.DEFAULT_R0,
    solver: inpaint.SolverConfig = inpaint.SolverConfig(),
    n_boot: int = 1000,
    jobs: int = 1,
    force: bool = False,
    validation: bool = False,
) -> dict[str, Any]:
    """Run phantom -> simulate -> extend -> complete -> evaluate under one root."""
    root = fresh_dir(out_root, force)
    if cfg is None:
        cfg = fovsim.SimConfig(dim=dim, seed=seed)
    run_phantom(root / "phantoms", n_phantoms, seed=seed, dim=dim, spacing=spacing)
    run_simulate(
        root / "phantoms",
        root / "sim",
        cfg=cfg,
        per_slice=per_slice,
        validation=validation,
        jobs=jobs,
    )
    run_extend(root / "sim", root / "extend", r0=r0)
    run_complete(
        root / "extend", root / "complete", cfg=solver, truth_dir=root / "sim", jobs=jobs
    )
    report = run_evaluate(
        root / "complete", root / "sim", root / "eval", seed=seed, n_boot=n_boot
    )
    return report
