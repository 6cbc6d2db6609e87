"""Batch pipeline stages: preprocess, flow, strain, report, synth.

Each stage reads its inputs through the manifest written by the
previous one, so stages can run in separate invocations.  File writes
go to stage-owned paths; the manifest is updated once per stage in a
deterministic order, which keeps full reruns bit-identical.
"""

from __future__ import annotations

import concurrent.futures
from pathlib import Path

import numpy as np

from . import flowio, preprocess, synth, visualize
from .config import PipelineConfig, dump_config, parse_pair_selector
from .errors import ConfigError, HygroflowError, MissingArtifactError
from .preprocess import AlignedPair, SpecimenScan
from .solver import coarse_to_fine, rerun_with_registration
from .strain import (coefficient_profile, compute_strain, detect_cracks,
                     k_profile, projection_error)

__all__ = [
    "run_preprocess",
    "run_flow",
    "run_strain",
    "run_report",
    "run_synth",
    "run_all",
]

MM_PER_INCH = 25.4


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pair_key(s0: str, s1: str) -> str:
    return f"{s0}-{s1}"


def _emit_effective_config(cfg: PipelineConfig, out: Path) -> None:
    dump_config(cfg, out / "effective_config.yaml")


def run_preprocess(cfg: PipelineConfig) -> list[str]:
    """Segment, align and crop all configured faces; returns error strings."""
    cfg.validate()
    out = _out_dir(cfg)
    _emit_effective_config(cfg, out)
    manifest = flowio.load_manifest(out)
    faces = manifest.setdefault("faces", {})
    errors = []

    for face_id in cfg.face_ids():
        specs = [s for s in cfg.inputs if s.face_id == face_id]
        try:
            scans = []
            for spec in specs:
                try:
                    rgb, meta_dpi = flowio.load_rgb_raster(spec.path)
                except (OSError, ValueError) as exc:
                    raise HygroflowError(f"{spec.path}: cannot decode ({exc})") from exc
                dpi = spec.dpi or meta_dpi
                if dpi is None:
                    raise ConfigError(
                        f"{spec.path}: no dpi metadata and no dpi override configured")
                scans.append(SpecimenScan(image=rgb, dpi=float(dpi),
                                          humidity=float(spec.humidity),
                                          face_id=face_id, state_id=spec.state_id))
            segmented = [preprocess.segment_scan(
                scan, working_dpi=cfg.working_dpi,
                border_px=cfg.preprocess.border_px,
                median_radius=cfg.preprocess.median_radius) for scan in scans]
            states = preprocess.align_and_crop(
                segmented, margin=cfg.preprocess.crop_margin,
                erosion_radius=cfg.preprocess.erosion_radius)
        except HygroflowError as exc:
            errors.append(f"face {face_id}: {exc}")
            continue

        face_rec = {"state_order": [s.state_id for s in states],
                    "synthetic": False, "states": {}, "pairs": {}}
        for st, seg in zip(states, segmented):
            base = f"{face_id}_{st.state_id}"
            lo, hi = flowio.save_image_png(out / f"{base}_aligned.png", st.gray,
                                           value_range=(0.0, 1.0))
            flowio.save_mask_png(out / f"{base}_mask.png", st.mask)
            flowio.save_mask_png(out / f"{base}_datamask.png", st.data_mask)
            face_rec["states"][st.state_id] = {
                "humidity": st.humidity,
                "dpi": st.dpi,
                "aligned": f"{base}_aligned.png",
                "aligned_range": [lo, hi],
                "mask": f"{base}_mask.png",
                "datamask": f"{base}_datamask.png",
                "shift": list(st.shift),
                "crop_origin": list(st.crop_origin),
                "derotation": st.derotation,
                "threshold": seg.threshold,
            }
        faces[face_id] = face_rec

    flowio.save_manifest(out, manifest)
    return errors


def _load_pair(out: Path, face_id: str, face_rec: dict,
               s0: str, s1: str) -> AlignedPair:
    states = face_rec["states"]
    for sid in (s0, s1):
        if sid not in states:
            raise MissingArtifactError(
                f"face {face_id}: state {sid!r} missing from preprocess manifest")
    rec0, rec1 = states[s0], states[s1]
    i1 = flowio.load_image_png(out / rec0["aligned"], tuple(rec0["aligned_range"]))
    i2 = flowio.load_image_png(out / rec1["aligned"], tuple(rec1["aligned_range"]))
    mask1 = flowio.load_mask_png(out / rec0["mask"])
    mask2 = flowio.load_mask_png(out / rec1["mask"])
    dm = (flowio.load_mask_png(out / rec0["datamask"])
          & flowio.load_mask_png(out / rec1["datamask"]))
    if rec1["humidity"] == rec0["humidity"]:
        raise ConfigError(
            f"face {face_id}: states {s0!r} and {s1!r} share humidity "
            f"{rec0['humidity']}; delta_rh would be zero")
    return AlignedPair(i1=i1, i2=i2, mask1=mask1, mask2=mask2, data_mask=dm,
                       delta_rh=rec1["humidity"] - rec0["humidity"],
                       dpi=rec0["dpi"], face_id=face_id, state_ids=(s0, s1))


def _select_pairs(cfg: PipelineConfig, manifest: dict,
                  selector: str | None) -> list[tuple[str, str, str]]:
    jobs = []
    for face_id in sorted(manifest.get("faces", {})):
        order = manifest["faces"][face_id]["state_order"]
        for s0, s1 in parse_pair_selector(selector or cfg.pairs, order):
            jobs.append((face_id, s0, s1))
    return jobs


def _flow_job(cfg: PipelineConfig, out: Path, face_id: str, face_rec: dict,
              s0: str, s1: str) -> tuple[str, dict]:
    pair = _load_pair(out, face_id, face_rec, s0, s1)
    result = coarse_to_fine(pair.i1, pair.i2, pair.data_mask, cfg.solver)
    if cfg.rerun_registration:
        result = rerun_with_registration(pair.i1, pair.i2, pair.data_mask,
                                         result, cfg.solver)
    base = f"{face_id}_{_pair_key(s0, s1)}"
    flowio.write_flow(out / f"{base}_flow.dflo", result.flow)
    illum_rng = flowio.save_image_png(out / f"{base}_illum.png", result.illumination)
    warped_rng = flowio.save_image_png(out / f"{base}_warped.png", result.warped)
    comp_rng = flowio.save_image_png(out / f"{base}_compensated.png",
                                     result.warped_compensated)
    viz_max = visualize.save_flow_png(out / f"{base}_flowviz.png", result.flow)
    record = {
        "states": [s0, s1],
        "delta_rh": pair.delta_rh,
        "raster": f"{base}_flow.dflo",
        "illum": f"{base}_illum.png",
        "illum_range": list(illum_rng),
        "warped": f"{base}_warped.png",
        "warped_range": list(warped_rng),
        "compensated": f"{base}_compensated.png",
        "compensated_range": list(comp_rng),
        "flowviz": f"{base}_flowviz.png",
        "flowviz_max_magnitude": viz_max,
        "energy": result.energy,
        "delta_theta_avg": result.delta_theta_avg,
        "v_avg": list(result.v_avg),
        "rigid_theta": result.rigid_theta,
        "rigid_shift": list(result.rigid_shift),
    }
    if face_rec.get("synthetic") and "truth_flow" in face_rec:
        truth = flowio.read_flow(out / face_rec["truth_flow"])
        mean_epe, p95 = synth.endpoint_error(result.flow, truth, pair.data_mask)
        record["endpoint_error"] = {"mean": mean_epe, "p95": p95}
    return _pair_key(s0, s1), record


def run_flow(cfg: PipelineConfig, selector: str | None = None) -> list[str]:
    """Estimate flow for every selected pair; returns error strings."""
    out = _out_dir(cfg)
    manifest = flowio.load_manifest(out)
    if not manifest.get("faces"):
        raise MissingArtifactError(
            f"{out}/manifest.json has no preprocessed faces; run preprocess first")
    _emit_effective_config(cfg, out)
    jobs = _select_pairs(cfg, manifest, selector)
    errors = []
    results: dict[tuple[str, str], dict] = {}

    def run_one(job):
        face_id, s0, s1 = job
        return job, _flow_job(cfg, out, face_id, manifest["faces"][face_id], s0, s1)

    if cfg.workers > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(cfg.workers) as pool:
            futures = {pool.submit(run_one, job): job for job in jobs}
            for fut in concurrent.futures.as_completed(futures):
                job = futures[fut]
                try:
                    _, (key, record) = fut.result()
                    results[(job[0], key)] = record
                except HygroflowError as exc:
                    errors.append(f"pair {job[0]}:{job[1]}-{job[2]}: {exc}")
    else:
        for job in jobs:
            try:
                _, (key, record) = run_one(job)
                results[(job[0], key)] = record
            except HygroflowError as exc:
                errors.append(f"pair {job[0]}:{job[1]}-{job[2]}: {exc}")

    for (face_id, key) in sorted(results):
        pair_rec = manifest["faces"][face_id]["pairs"].setdefault(key, {})
        pair_rec["flow"] = results[(face_id, key)]
    flowio.save_manifest(out, manifest)
    return errors


def _profile_rows(profile, mm_per_px, crack_cols):
    rows = []
    for i, pos in enumerate(profile.positions):
        rows.append([
            int(pos),
            float(pos) * mm_per_px if mm_per_px else float("nan"),
            float(profile.k_small[i]),
            float(profile.k_green[i]) if profile.k_green is not None else float("nan"),
            int(profile.n_averaged[i]),
            int(pos) in crack_cols,
        ])
    return rows


def _strain_job(cfg: PipelineConfig, out: Path, face_id: str, face_rec: dict,
                s0: str, s1: str) -> tuple[str, dict]:
    key = _pair_key(s0, s1)
    pair_rec = face_rec.get("pairs", {}).get(key)
    if not pair_rec or "flow" not in pair_rec:
        raise MissingArtifactError(
            f"face {face_id} pair {key}: no flow artifacts; run flow first")
    flow_rec = pair_rec["flow"]
    flow = flowio.read_flow(out / flow_rec["raster"])
    dm = (flowio.load_mask_png(out / face_rec["states"][s0]["datamask"])
          & flowio.load_mask_png(out / face_rec["states"][s1]["datamask"]))
    delta_rh = flow_rec["delta_rh"]
    scfg = cfg.strain

    fields = compute_strain(flow)
    base_profiles = {
        axis: k_profile((fields.eps22 if axis == "y" else fields.eps11) / delta_rh,
                        dm, axis, min_count=scfg.min_count)
        for axis in ("x", "y")
    }
    cracks = (detect_cracks(fields.eps11, base_profiles.values(), delta_rh,
                            scfg.crack_factor)
              | detect_cracks(fields.eps22, base_profiles.values(), delta_rh,
                              scfg.crack_factor))
    profiles = {
        axis: coefficient_profile(flow, dm, delta_rh, axis,
                                  crack_factor=scfg.crack_factor,
                                  min_count=scfg.min_count, strain=fields,
                                  crack_mask=cracks)
        for axis in ("x", "y")
    }

    base = f"{face_id}_{key}"
    dpi = face_rec["states"][s0]["dpi"]
    mm_per_px = MM_PER_INCH / dpi if cfg.report.mm_units and dpi else None
    proj_err = None
    if (cfg.report.projection_radius_mm is not None
            and cfg.report.projection_delta_y_mm is not None):
        proj_err = projection_error(cfg.report.projection_radius_mm,
                                    cfg.report.projection_delta_y_mm)

    crack_count = int(np.count_nonzero(cracks & dm))
    record = {"profiles": {}, "crack_count": crack_count,
              "crackmask": f"{base}_crackmask.png",
              "summary": f"{base}_summary.csv"}
    flowio.save_mask_png(out / record["crackmask"], cracks & dm)

    summary_rows = []
    for axis, profile in profiles.items():
        csv_name = f"{base}_profile_{axis}.csv"
        crack_cols = {x if axis == "y" else y for x, y in profile.crack_positions}
        flowio.write_csv(
            out / csv_name,
            ["position_px", "position_mm", "k_small", "k_green", "n_averaged",
             "is_near_crack"],
            _profile_rows(profile, mm_per_px, crack_cols))
        plot_name = f"{base}_profile_{axis}.png"
        visualize.save_profile_plot(out / plot_name, profile, mm_per_px,
                                    title=f"{face_id} {key}: k_{axis}")
        record["profiles"][axis] = {
            "csv": csv_name, "plot": plot_name,
            "mean_small": profile.mean_small, "var_small": profile.var_small,
            "mean_green": profile.mean_green, "var_green": profile.var_green,
            "n_positions": int(profile.positions.size),
        }
        for variant, mean, var in (("small", profile.mean_small, profile.var_small),
                                   ("green", profile.mean_green, profile.var_green)):
            summary_rows.append([face_id, s0, s1, delta_rh, axis, variant,
                                 mean, var, int(profile.positions.size),
                                 crack_count,
                                 proj_err if proj_err is not None else float("nan")])
    flowio.write_csv(
        out / record["summary"],
        ["face_id", "state_ref", "state_other", "delta_rh", "axis", "variant",
         "mean", "variance", "n_positions", "crack_count", "projection_error_mm"],
        summary_rows)

    for name, field in (("eps11", fields.eps11), ("eps22", fields.eps22),
                        ("gamma12", fields.gamma12), ("eps1", fields.eps1),
                        ("eps2", fields.eps2)):
        flowio.save_float_tiff(out / f"{base}_{name}.tif", field)
    visualize.save_heatmap(out / f"{base}_strain_eps11.png", fields.eps11,
                           title=f"{face_id} {key}: eps11")
    visualize.save_heatmap(out / f"{base}_strain_eps22.png", fields.eps22,
                           title=f"{face_id} {key}: eps22")
    record["strain_rasters"] = [f"{base}_{n}.tif"
                                for n in ("eps11", "eps22", "gamma12", "eps1", "eps2")]
    if proj_err is not None:
        record["projection_error_mm"] = proj_err
    return key, record


def run_strain(cfg: PipelineConfig, selector: str | None = None) -> list[str]:
    """Derive strain and coefficient artifacts for every pair with flow."""
    out = _out_dir(cfg)
    manifest = flowio.load_manifest(out)
    if not manifest.get("faces"):
        raise MissingArtifactError(
            f"{out}/manifest.json has no faces; run preprocess and flow first")
    errors = []
    results = {}
    for face_id, s0, s1 in _select_pairs(cfg, manifest, selector):
        try:
            key, record = _strain_job(cfg, out, face_id,
                                      manifest["faces"][face_id], s0, s1)
            results[(face_id, key)] = record
        except HygroflowError as exc:
            errors.append(f"pair {face_id}:{s0}-{s1}: {exc}")
    for (face_id, key) in sorted(results):
        pair_rec = manifest["faces"][face_id]["pairs"].setdefault(key, {})
        pair_rec["strain"] = results[(face_id, key)]
    flowio.save_manifest(out, manifest)
    return errors


def run_report(cfg: PipelineConfig) -> list[str]:
    """Write one human-readable summary per face."""
    out = _out_dir(cfg)
    manifest = flowio.load_manifest(out)
    faces = manifest.get("faces", {})
    if not faces:
        raise MissingArtifactError(f"nothing to report: no artifacts in {out}")
    errors = []
    for face_id in sorted(faces):
        face_rec = faces[face_id]
        lines = [f"Face {face_id}", "=" * (5 + len(face_id)), ""]
        lines.append(f"states: {', '.join(face_rec['state_order'])}")
        for sid in face_rec["state_order"]:
            st = face_rec["states"][sid]
            lines.append(f"  {sid}: RH {st['humidity']}%  dpi {st['dpi']}")
        s = cfg.solver
        lines.append("")
        lines.append(
            "solver: data_weight=%g illum_scale=%g eps_flow=%g eps_illum=%g "
            "warps=%d pd_iters=%d scale=%g levels=%s"
            % (s.data_weight, s.illum_scale, s.huber_eps_flow, s.huber_eps_illum,
               s.warps, s.pd_iters, s.pyramid_scale, s.levels))
        pairs = face_rec.get("pairs", {})
        if not pairs:
            errors.append(f"face {face_id}: no pair artifacts to report")
        for key in sorted(pairs):
            rec = pairs[key]
            lines.append("")
            lines.append(f"pair {key}:")
            if "flow" not in rec:
                errors.append(f"face {face_id} pair {key}: missing flow artifacts")
                lines.append("  flow: MISSING")
                continue
            fr = rec["flow"]
            lines.append(f"  delta_rh: {fr['delta_rh']:+g} %RH")
            lines.append(f"  energy: {fr['energy']:.6g}")
            lines.append(
                "  rotation: %.5f deg   translation: (%.4f, %.4f) px"
                % (np.rad2deg(fr["delta_theta_avg"]), fr["v_avg"][0], fr["v_avg"][1]))
            if fr.get("rigid_theta"):
                lines.append(
                    "  rigid pre-registration: %.5f deg, shift (%.4f, %.4f) px"
                    % (np.rad2deg(fr["rigid_theta"]), fr["rigid_shift"][0],
                       fr["rigid_shift"][1]))
            if "endpoint_error" in fr:
                ep = fr["endpoint_error"]
                lines.append("  endpoint error vs truth: mean %.5f px, p95 %.5f px"
                             % (ep["mean"], ep["p95"]))
            if "strain" not in rec:
                errors.append(f"face {face_id} pair {key}: missing strain artifacts")
                lines.append("  strain: MISSING")
                continue
            sr = rec["strain"]
            for axis in ("x", "y"):
                pr = sr["profiles"][axis]
                lines.append(
                    "  k_%s: small %.6g (var %.3g)   green %.6g (var %.3g)   [%d cols]"
                    % (axis, pr["mean_small"], pr["var_small"], pr["mean_green"],
                       pr["var_green"], pr["n_positions"]))
            lines.append(f"  crack pixels: {sr['crack_count']}")
            if "projection_error_mm" in sr:
                lines.append(
                    "  projection-error bound: %.4f mm (r=%g mm, dy=%g mm)"
                    % (sr["projection_error_mm"], cfg.report.projection_radius_mm,
                       cfg.report.projection_delta_y_mm))
        report_path = out / f"{face_id}_report.txt"
        report_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return errors


def run_synth(cfg: PipelineConfig, case: str | None = None,
              size: int | None = None) -> list[str]:
    """Emit synthetic catalog cases in the preprocess output layout.

    Each case becomes a face with states S0/S1 plus ground-truth flow and
    illumination rasters, so the flow/strain/report stages run unchanged
    and can score themselves against the truth.
    """
    out = _out_dir(cfg)
    _emit_effective_config(cfg, out)
    manifest = flowio.load_manifest(out)
    faces = manifest.setdefault("faces", {})
    names = [case] if case else synth.case_names()
    for name in names:
        sc = synth.build_case(name, seed=cfg.seed, size=size)
        face_rec = {"state_order": ["S0", "S1"], "synthetic": True,
                    "description": sc.description, "states": {}, "pairs": {},
                    "truth_flow": f"{name}_truth.dflo",
                    "truth_illum": f"{name}_truth_illum.tif"}
        flowio.write_flow(out / face_rec["truth_flow"], sc.true_flow)
        flowio.save_float_tiff(out / face_rec["truth_illum"], sc.true_illum)
        rh0 = 50.0
        for sid, img, humidity in (("S0", sc.i1, rh0),
                                   ("S1", sc.i2, rh0 + sc.delta_rh)):
            base = f"{name}_{sid}"
            lo, hi = flowio.save_image_png(out / f"{base}_aligned.png", img)
            flowio.save_mask_png(out / f"{base}_mask.png", sc.mask)
            flowio.save_mask_png(out / f"{base}_datamask.png", sc.data_mask)
            face_rec["states"][sid] = {
                "humidity": humidity, "dpi": cfg.working_dpi,
                "aligned": f"{base}_aligned.png", "aligned_range": [lo, hi],
                "mask": f"{base}_mask.png", "datamask": f"{base}_datamask.png",
                "shift": [0, 0], "crop_origin": [0, 0],
                "derotation": 0.0, "threshold": 0.0,
            }
        faces[name] = face_rec
    flowio.save_manifest(out, manifest)
    return []


def run_all(cfg: PipelineConfig, selector: str | None = None) -> list[str]:
    """preprocess -> flow -> strain -> report in one invocation."""
    errors = run_preprocess(cfg)
    errors += run_flow(cfg, selector)
    errors += run_strain(cfg, selector)
    errors += run_report(cfg)
    return errors
