"""Eleven end-to-end acceptance checks, one PASS/FAIL line each.

Run standalone with ``python tests/test_acceptance.py`` or through pytest;
the verdict lines are also repeated in pytest's terminal summary.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import Polygon

sys.path.insert(0, str(Path(__file__).parent))

import drivesafe.planner as P  # noqa: E402
from drivesafe.attacks.patch import train_patch  # noqa: E402
from drivesafe.attacks.pgd import PerturbationConfig, pgd_attack  # noqa: E402
from drivesafe.collision import OrientedRect, obb_intersect  # noqa: E402
from drivesafe.experiment import (  # noqa: E402
    ExperimentConfig,
    format_table,
    intention_consistency,
    patch_dataset,
    patch_training_config,
    perturbation_sweep,
    planner_comparison,
    run_experiment,
)
from drivesafe.generator import make_scenario  # noqa: E402
from drivesafe.metrics import Difficulty, average_precision  # noqa: E402
from drivesafe.perception import surrogate as S  # noqa: E402
from drivesafe.scenario import CAR_DIMS, INTENTIONS, ClassifiedObject, DetectedBox3D, goal_region  # noqa: E402
from oracles import _central_from_base, brute_force_ap, exhaustive_best_cost, reference_outputs, sampled_overlap  # noqa: E402

VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


_CACHE: dict = {}


def cached(key, make):
    if key not in _CACHE:
        _CACHE[key] = make()
    return _CACHE[key]


def perturb_run():
    def make():
        t0 = time.perf_counter()
        res = run_experiment(ExperimentConfig(sweep=perturbation_sweep()))
        return res, time.perf_counter() - t0

    return cached("perturb", make)


def consistency_run():
    return cached("consistency", lambda: intention_consistency(ExperimentConfig()))


def default_csv(jobs):
    return cached(("default", jobs), lambda: run_experiment(ExperimentConfig(jobs=jobs)).csv)


def pp(x):
    return 100.0 * x


# --- 1 --------------------------------------------------------------------


def test_criterion_01_metric_identity():
    rows = list(perturb_run()[0].report.rows) + list(consistency_run()["report"].rows)
    worst = max(abs(r.m_saf - (1 - (r.m_cls or 0.0)) * r.m_suc) for r in rows)
    # published row: 89.6 % success, 2.2 % collisions, 87.7 % safe
    m_saf = (1 - 0.022) * 0.896
    # inputs are rounded to 0.1 pp, so the product carries about 0.1 pp of slack
    ok = worst < 1e-12 and abs(pp(m_saf) - 87.7) <= 0.1
    verdict(1, ok, f"{len(rows)} rows, worst residual {worst:.1e}; published row recomputes to {pp(m_saf):.2f}%")


# --- 2 --------------------------------------------------------------------


def test_criterion_02_perturbation_decoupling():
    res, elapsed = perturb_run()
    rep = res.report
    first, last = "effect-perturb-0", "effect-perturb-4"
    ap_drops, saf = [], []
    for i in INTENTIONS:
        a, b = rep.get(i, first), rep.get(i, last)
        ap_drops.append(pp(a.ap_easy - b.ap_easy))
        saf.append(max(abs(pp(rep.get(i, s.label).m_saf - a.m_saf)) for s in perturbation_sweep()))
    ok = min(ap_drops) >= 40 and max(saf) <= 5 and elapsed <= 60
    verdict(
        2, ok,
        f"AP_easy drop {min(ap_drops):.1f} pp (>= 40), max |d safety| {max(saf):.2f} pp (<= 5), {elapsed:.1f} s (<= 60)",
    )


# --- 3 --------------------------------------------------------------------


def test_criterion_03_patch_decoupling():
    out = consistency_run()
    rep = out["report"]
    saf_drops, ap_drops = [], []
    for i in INTENTIONS:
        label = f"effect-patch-specific-{i.value}"
        base, att = rep.get(i, "none"), rep.get(i, label)
        saf_drops.append(pp(base.m_saf - att.m_saf))
        for d in ("ap_easy", "ap_moderate", "ap_hard"):
            if getattr(base, d) is not None:
                ap_drops.append(pp(getattr(base, d) - getattr(att, d)))
    ok = min(saf_drops) >= 10 and max(ap_drops) <= 10
    detail = ", ".join(f"{i.value} {d:.1f}" for i, d in zip(INTENTIONS, saf_drops))
    verdict(3, ok, f"matching safety drop pp: {detail} (>= 10); max AP drop {max(ap_drops):.1f} pp (<= 10)")


# --- 4 --------------------------------------------------------------------


def test_criterion_04_intention_consistency():
    out = consistency_run()
    spec, rand = out["specific_matching_drop"], out["random_nonmatching_drop"]
    ok = pp(spec) >= 2 * pp(rand)
    verdict(4, ok, f"specific matching {pp(spec):.1f} pp vs random non-matching {pp(rand):.1f} pp (need >= 2x)")


# --- 5 --------------------------------------------------------------------


def test_criterion_05_pgd_contract():
    d = S.load_default()
    runs, monotone, step_ok, total_ok, ident_ok = 100, 0, True, True, True
    for seed in range(runs):
        rng = np.random.default_rng(1000 + seed)
        labels = S.random_layout(rng, int(rng.integers(1, 4)))
        img = S.render(labels)
        eps = float(rng.choice([0.05, 0.1, 0.5, 1.0]))
        alpha = float(rng.choice([0.05, 0.1, 0.5, 2.0]))
        n = int(rng.integers(1, 11))
        tr = pgd_attack(d, img, labels, PerturbationConfig(eps, alpha, n))
        step_ok &= len(tr.step_linf) == n and all(s <= eps for s in tr.step_linf)
        total = max(np.abs(tr.image.left - img.left).max(), np.abs(tr.image.right - img.right).max())
        # n float additions to 0..255 pixels each round by at most one ulp
        total_ok &= bool(total <= n * eps + (n + 1) * np.spacing(255.0))
        monotone += all(b >= a for a, b in zip(tr.losses, tr.losses[1:]))
        if seed < 10:
            same = pgd_attack(d, img, labels, PerturbationConfig(eps, alpha, 0)).image
            ident_ok &= np.array_equal(same.left, img.left) and np.array_equal(same.right, img.right)
    ok = step_ok and total_ok and ident_ok and monotone >= 95
    verdict(
        5, ok,
        f"step bound {step_ok}, total bound {total_ok}, N=0 identity {ident_ok}, non-decreasing {monotone}/{runs}",
    )


# --- 6 --------------------------------------------------------------------


def test_criterion_06_gradient_check():
    worst, checked = 0.0, 0
    for cfg_seed in range(10):
        rng = np.random.default_rng(500 + cfg_seed)
        theta = rng.normal(0, 10 ** rng.uniform(-4, -3), S.N_PARAMS)
        d = S.DetectorSurrogate(theta)
        left = rng.uniform(0, 255, (S.HEIGHT, S.WIDTH, 3))
        right = rng.uniform(0, 255, (S.HEIGHT, S.WIDTH, 3))
        labels = S.random_layout(rng, int(rng.integers(0, 4)))
        lg = S.loss_and_gradient(d, S.StereoImagePair(left, right), labels)
        base = reference_outputs(theta, left, right)
        for _ in range(100):
            side = int(rng.integers(2))
            r, c, ch = int(rng.integers(S.HEIGHT)), int(rng.integers(S.WIDTH)), int(rng.integers(3))
            fd = float(_central_from_base(base, theta, labels, side, r, c, ch, h=1e-3))
            an = float((lg.grad_left if side == 0 else lg.grad_right)[r, c, ch])
            checked += 1
            if fd == an == 0.0:
                continue
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    verdict(6, worst < 1e-4, f"{checked} pixels, max relative error {worst:.2e} (< 1e-4)")


# --- 7 --------------------------------------------------------------------


def test_criterion_07_patch_training():
    d = S.load_default()
    res = train_patch(d, patch_dataset(0), patch_training_config(0))
    c0, c100 = res.curve[0], res.curve[100]
    verdict(7, c100 <= 0.5 * c0, f"objective {c0:.4f} -> {c100:.4f} at epoch 100, ratio {c100 / c0:.3f} (<= 0.5)")


# --- 8 --------------------------------------------------------------------


def _in_tangency_band(pa: Polygon, pb: Polygon, band=1e-6) -> bool:
    # the verdict flips somewhere between shrinking and growing both by the band
    grown = pa.buffer(band, join_style=2).intersects(pb.buffer(band, join_style=2))
    shrunk = pa.buffer(-band, join_style=2).intersects(pb.buffer(-band, join_style=2))
    return grown != shrunk


def test_criterion_08_geometry_oracle():
    rng = np.random.default_rng(8)
    disagree = band = 0
    for _ in range(10_000):
        a, b = (
            OrientedRect(tuple(rng.uniform(-6, 6, 2)), tuple(rng.uniform(0.3, 3.0, 2)), float(rng.uniform(-math.pi, math.pi)))
            for _ in range(2)
        )
        pa, pb = Polygon(a.corners()), Polygon(b.corners())
        if _in_tangency_band(pa, pb):
            band += 1
            continue
        disagree += obb_intersect(a, b) != sampled_overlap(a, b, 10_000)
    verdict(8, disagree == 0, f"10000 pairs, {disagree} disagreements, {band} inside the 1e-6 m band")


# --- 9 --------------------------------------------------------------------


def test_criterion_09_planner_optimality(monkeypatch):
    monkeypatch.setattr(P, "HORIZON", 4.0)
    rng = np.random.default_rng(9)
    mismatches, solved = 0, 0
    for i in range(50):
        s = make_scenario(99, i)
        extra = [
            ClassifiedObject(DetectedBox3D((rng.uniform(8, 25), float(rng.choice([-3.5, 0.0, 3.5])), 0.75), CAR_DIMS))
            for _ in range(rng.integers(0, 3))
        ]
        objs = list(s.objects) + extra
        g = goal_region(s, INTENTIONS[i % 3])
        res = P.plan(objs, s.ego_context, g, lanes=s.lanes)
        best = math.inf if g.lane_missing else exhaustive_best_cost(P.Search(objs, s.ego_context, g, P.CostFunction(), s.lanes), 4)
        got = res.cost if res.success else math.inf
        solved += res.success
        mismatches += got != best
    monkeypatch.undo()
    rows = planner_comparison(ExperimentConfig())
    table = format_table(rows, ["algo", "intention", "m_suc", "m_cls", "m_saf", "mean_expanded", "mean_cost"])
    print(table)
    ok = mismatches == 0 and {r["algo"] for r in rows} == {"astar", "gbfs"}
    verdict(9, ok, f"50 instances ({solved} solvable), {mismatches} cost mismatches; comparison table with {len(rows)} rows")


# --- 10 -------------------------------------------------------------------


def _random_ap_instance(rng):
    gts = [
        DetectedBox3D((rng.uniform(-5, 55), rng.uniform(-8, 8), 0.75), (rng.uniform(3.5, 4.5), rng.uniform(1.5, 2), 1.5), rng.uniform(-0.3, 0.3))
        for _ in range(rng.integers(0, 7))
    ]
    dets = []
    for g in gts:
        if rng.random() < 0.8:
            c = (g.center[0] + rng.normal(0, 0.3), g.center[1] + rng.normal(0, 0.2), g.center[2])
            dets.append(DetectedBox3D(c, g.dims, g.yaw + rng.normal(0, 0.05), "Car", float(rng.choice([rng.random(), 0.5]))))
    for _ in range(rng.integers(0, 5)):
        dets.append(DetectedBox3D((rng.uniform(0, 55), rng.uniform(-8, 8), 0.75), (4.0, 1.8, 1.5), 0.0, "Car", float(rng.random())))
    return dets, gts


def _shapely_iou(a, b):
    pa = Polygon(OrientedRect.from_box(a).corners())
    pb = Polygon(OrientedRect.from_box(b).corners())
    lo = max(a.center[2] - a.dims[2] / 2, b.center[2] - b.dims[2] / 2)
    hi = min(a.center[2] + a.dims[2] / 2, b.center[2] + b.dims[2] / 2)
    inter = pa.intersection(pb).area * max(0.0, hi - lo)
    return inter / (math.prod(a.dims) + math.prod(b.dims) - inter)


def test_criterion_10_ap_oracle():
    rng = np.random.default_rng(10)
    mismatches = variant = 0
    for _ in range(200):
        dets, gts = _random_ap_instance(rng)
        iou = [[_shapely_iou(d, g) for g in gts] for d in dets]
        moved = [DetectedBox3D(d.center, d.dims, d.yaw, d.class_label, 0.1 + d.score ** 3) for d in dets]
        for diff in Difficulty:
            got = average_precision(dets, gts, 0.7, diff)
            mismatches += got != brute_force_ap(dets, gts, iou, 0.7, diff.max_range)
            variant += got != average_precision(moved, gts, 0.7, diff)
    ok = mismatches == 0 and variant == 0
    verdict(10, ok, f"200 instances x 3 bands, {mismatches} mismatches, {variant} changed by monotone rescaling")


# --- 11 -------------------------------------------------------------------


def test_criterion_11_determinism():
    a, b, c = default_csv(1), cached("default-again", lambda: run_experiment(ExperimentConfig()).csv), default_csv(2)
    ok = a == b == c
    verdict(11, ok, f"default run twice with jobs=1 and once with jobs=2: {'identical' if ok else 'different'} CSV")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
