"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the
per-criterion lines and timings.
"""

import time

import numpy as np
import pytest

from hygroflow.config import PipelineConfig
from hygroflow.grids import FlowField, divergence, gradient_forward
from hygroflow.pipeline import run_flow, run_report, run_strain, run_synth
from hygroflow.preprocess import otsu_threshold
from hygroflow.solver import (SolverParams, coarse_to_fine, huber, pd_solve,
                              rerun_with_registration)
from hygroflow.strain import (coefficient_profile, compute_strain, detect_cracks,
                              k_endpoint, k_profile, projection_error)
from hygroflow.synth import build_case, case_names, endpoint_error

from oracles import subgradient_descent, zero_warp_energy
from test_preprocess import otsu_oracle

REFERENCE_PARAMS = dict(data_weight=10.0, illum_scale=0.04,
                        huber_eps_flow=0.2, huber_eps_illum=0.05)


def report(number, name, budget_s, elapsed, detail=""):
    print(f"criterion {number:2d} [{name}]: PASS in {elapsed:.2f}s "
          f"(budget {budget_s:.0f}s) {detail}")
    assert elapsed < budget_s, f"criterion {number} exceeded {budget_s}s budget"


def test_criterion_01_huber_norm():
    t0 = time.perf_counter()
    assert huber(0.5, 1.0) == 0.125
    assert huber(2.0, 1.0) == 1.5
    eps = 1.0
    assert abs(huber(eps, eps) - (eps - eps / 2.0)) <= 1e-12
    assert abs(huber(np.nextafter(eps, 0), eps)
               - huber(np.nextafter(eps, 2), eps)) <= 1e-12
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b = rng.uniform(-50, 50, 2)
        e = rng.uniform(0.0, 5.0)
        mid = huber(0.5 * (a + b), e)
        assert mid <= 0.5 * (huber(a, e) + huber(b, e)) + 1e-10
    report(1, "huber norm", 1.0, time.perf_counter() - t0)


def test_criterion_02_operator_adjointness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    for _ in range(100):
        h, w = rng.integers(2, 65, 2)
        a = rng.standard_normal((h, w))
        px = rng.standard_normal((h, w))
        py = rng.standard_normal((h, w))
        gx, gy = gradient_forward(a)
        lhs = np.sum(gx * px + gy * py)
        rhs = np.sum(a * divergence(px, py))
        assert abs(lhs + rhs) <= 1e-10 * max(1.0, abs(lhs))
    report(2, "gradient/divergence adjointness", 5.0, time.perf_counter() - t0)


def test_criterion_03_otsu_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    images = [rng.random((16, 16)) for _ in range(50)]
    yy, xx = np.mgrid[0:16, 0:16] / 15.0
    images += [xx, yy, xx * yy, np.where(xx > 0.4, 0.85, 0.2) + 0.02 * yy,
               np.sin(6 * xx) * 0.5 + 0.5]
    for g in images:
        assert otsu_threshold(g) == otsu_oracle(g)
    report(3, "Otsu exhaustive oracle", 5.0, time.perf_counter() - t0,
           f"{len(images)} images")


def test_criterion_04_solver_translation_accuracy():
    t0 = time.perf_counter()
    params = SolverParams()
    for key, value in REFERENCE_PARAMS.items():
        assert getattr(params, key) == value
    case = build_case("shift-0.5px")
    assert case.i1.shape == (256, 256)
    res = coarse_to_fine(case.i1, case.i2, case.data_mask, params)
    mean_vx = res.flow.vx[case.data_mask].mean()
    mean_epe, _ = endpoint_error(res.flow, case.true_flow, case.data_mask)
    assert 0.4 <= mean_vx <= 0.6
    assert mean_epe < 0.1
    report(4, "translation accuracy", 60.0, time.perf_counter() - t0,
           f"mean vx {mean_vx:.4f}, EPE {mean_epe:.4f}")


def test_criterion_05_stretch_coefficient_accuracy():
    t0 = time.perf_counter()
    case = build_case("stretch-1pct")
    assert case.i1.shape == (512, 512)
    res = coarse_to_fine(case.i1, case.i2, case.data_mask, SolverParams())
    expected = 1.0e-3  # 1 percent stretch over delta RH = 10
    assert case.delta_rh == 10.0
    details = []
    for axis in ("x", "y"):
        prof = coefficient_profile(res.flow, case.data_mask, case.delta_rh, axis)
        for name, mean, var in (("small", prof.mean_small, prof.var_small),
                                ("green", prof.mean_green, prof.var_green)):
            assert abs(mean - expected) <= 0.05 * expected, (axis, name, mean)
            assert var < 0.1 * mean ** 2, (axis, name, var)
        details.append(f"k_{axis} {prof.mean_small:.4e}")
    report(5, "stretch coefficient", 180.0, time.perf_counter() - t0,
           ", ".join(details))


def test_criterion_06_small_instance_energy_oracle():
    t0 = time.perf_counter()
    from hygroflow.synth import AnalyticFlow, render_pair, wood_texture
    params = SolverParams(warps=1, pd_iters=3000, levels=1,
                          median_flow_filter=False)
    for seed in (10, 11, 12):
        tex = wood_texture(8, 8, seed)
        pair = render_pair(tex, AnalyticFlow.translation(0.3, -0.2))
        mask = np.ones((8, 8), bool)
        flow, u = pd_solve(pair.i1, pair.i2, mask, FlowField.zeros((8, 8)),
                           np.zeros((8, 8)), params)
        e_pd = zero_warp_energy(flow, u, pair.i1, pair.i2, mask, params)
        e_oracle = subgradient_descent(pair.i1, pair.i2, mask, params, iters=20000)
        assert e_pd <= e_oracle + 1e-3
    report(6, "energy vs subgradient oracle", 30.0, time.perf_counter() - t0)


def test_criterion_07_telescoping_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(20):
        h, w = rng.integers(15, 40), rng.integers(6, 20)
        flow = FlowField(rng.standard_normal((h, w)),
                         rng.standard_normal((h, w)).cumsum(axis=0) * 0.05)
        mask = rng.random((h, w)) > 0.25
        try:
            prof = k_endpoint(flow, mask, 7.0, "y", min_span=4)
        except Exception:
            continue
        for pos, val in zip(prof.positions, prof.k_small):
            col = np.nonzero(mask[:, pos])[0]
            breaks = np.nonzero(np.diff(col) > 1)[0]
            starts = np.concatenate([[0], breaks + 1])
            stops = np.concatenate([breaks, [col.size - 1]])
            li = int(np.argmax(stops - starts))
            a, b = col[starts[li]], col[stops[li]]
            fwd_sum = np.sum(flow.vy[a + 1:b + 1, pos] - flow.vy[a:b, pos])
            assert abs(fwd_sum / ((b - a) * 7.0) - val) <= 1e-12
            checked += 1
    assert checked > 50
    report(7, "telescoping identity", 1.0, time.perf_counter() - t0,
           f"{checked} columns")


def test_criterion_08_rotation_estimation():
    t0 = time.perf_counter()
    from hygroflow.solver import estimate_rotation
    from hygroflow.synth import AnalyticFlow
    field = AnalyticFlow.rotation(np.deg2rad(1.0)).field((256, 256))
    mask = np.ones((256, 256), bool)
    dtheta, _ = estimate_rotation(field, mask, (127.5, 127.5))
    assert abs(np.rad2deg(dtheta) - 1.0) <= 0.05
    case = build_case("rot-2deg")
    params = SolverParams()
    first = coarse_to_fine(case.i1, case.i2, case.data_mask, params)
    rerun = rerun_with_registration(case.i1, case.i2, case.data_mask, first, params)
    residual = abs(np.rad2deg(rerun.delta_theta_avg))
    assert residual < 0.2
    report(8, "rotation estimation", 120.0, time.perf_counter() - t0,
           f"1deg field {np.rad2deg(dtheta):.4f}, rerun residual {residual:.4f} deg")


def test_criterion_09_crack_handling():
    t0 = time.perf_counter()
    case = build_case("crack-1.5px")
    flow = case.true_flow
    step_row = case.i1.shape[0] / 2.0
    fields = compute_strain(flow)
    base = k_profile(fields.eps22 / case.delta_rh, case.data_mask, "y")
    cracks = detect_cracks(fields.eps22, [base], case.delta_rh)
    ys = np.unique(np.nonzero(cracks & case.data_mask)[0])
    assert ys.size > 0
    assert np.all(np.abs(ys - step_row) <= 2.0)
    with_cracks = k_profile(fields.eps2 / case.delta_rh, case.data_mask, "y")
    excluded = coefficient_profile(flow, case.data_mask, case.delta_rh, "y")
    assert excluded.crack_positions
    assert excluded.mean_green != with_cracks.mean_small
    assert abs(excluded.mean_green - with_cracks.mean_small) > 1e-6
    report(9, "crack omission rule", 120.0, time.perf_counter() - t0,
           f"rows {ys.tolist()}, green {with_cracks.mean_small:.3e} -> "
           f"{excluded.mean_green:.3e}")


def test_criterion_10_projection_error():
    t0 = time.perf_counter()
    assert projection_error(50.0, 2.0) == pytest.approx(0.04, abs=0.001)
    report(10, "projection error", 1.0, time.perf_counter() - t0,
           f"value {projection_error(50.0, 2.0):.6f} mm")


def test_criterion_11_illumination_compensation():
    t0 = time.perf_counter()
    case = build_case("stain-0.1")
    params = SolverParams()
    res = coarse_to_fine(case.i1, case.i2, case.data_mask, params)
    bu = params.illum_scale * res.illumination
    corr = np.corrcoef(bu[case.data_mask], case.true_illum[case.data_mask])[0, 1]
    assert corr > 0.8
    res0 = coarse_to_fine(case.i1, case.i2, case.data_mask,
                          SolverParams(illum_scale=0.0, warps=2, pd_iters=20))
    assert np.array_equal(res0.illumination, np.zeros(case.i1.shape))
    report(11, "illumination compensation", 120.0, time.perf_counter() - t0,
           f"corr {corr:.4f}")


def test_criterion_12_pipeline_determinism(tmp_path):
    t0 = time.perf_counter()
    digests = []
    for run in ("run1", "run2"):
        out = tmp_path / run
        cfg = PipelineConfig(output_dir=str(out), seed=7)
        cfg.strain.min_count = 8
        cfg.strain.min_span = 8
        run_synth(cfg)
        assert run_flow(cfg) == []
        assert run_strain(cfg) == []
        assert run_report(cfg) == []
        snapshot = {}
        for path in sorted(out.iterdir()):
            if path.suffix in (".csv", ".dflo") or path.name == "manifest.json":
                snapshot[path.name] = path.read_bytes()
        digests.append(snapshot)
    assert digests[0].keys() == digests[1].keys()
    n_cases = len(case_names())
    assert sum(1 for n in digests[0] if n.endswith(".dflo")) == 2 * n_cases
    for name in digests[0]:
        assert digests[0][name] == digests[1][name], f"{name} differs between runs"
    report(12, "pipeline determinism", 600.0, time.perf_counter() - t0,
           f"{len(digests[0])} files bit-identical")
