"""End-to-end sweeps: detections, attack, motion classification, planning, verdicts.

Planning always consumes the (possibly attacked) detections while collision
verdicts use the scenario's ground-truth objects.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attacks.effects import (
    EffectKind,
    EffectModel,
    ghost_intention,
    inject_effects,
    perturbation_effect,
)
from .attacks.patch import (
    PatchTrainingConfig,
    Placement,
    PlacementPolicy,
    apply_patch,
    load_patch,
    sample_placement,
    train_patch,
)
from .attacks.pgd import PerturbationConfig, pgd_perturb
from .collision import check_trajectory
from .generator import generate_suite
from .ingest import report_csv, scenario_from_dict
from .metrics import (
    Difficulty,
    MetricsReport,
    ReportRow,
    ScenarioOutcome,
    eleven_point_ap,
    iou_matrix,
    match_detections,
)
from .perception.motion import classify_motion, select_constraints
from .perception.surrogate import DEFAULT_THETA, DetectorSurrogate, detect, random_layout, render
from .planner import Algo, plan
from .scenario import INTENTIONS, DetectedBox3D, Intention, Scenario, goal_region
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

ATTACK_KINDS = ("none", "pgd", "patch", "effect-perturb", "effect-patch")
DIFFICULTIES = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)


@dataclass(frozen=True)
class AttackSetting:
    """One column of a sweep.

    For placement-based attacks ``region`` pins the placement to the lane of
    that intention; when it is None and placement is "specific" the lane of
    the evaluated intention is used.
    """

    kind: str = "none"
    level: int = 0  # effect-perturb sweep level, 0..4
    alpha: float = 0.1
    eps: float = 0.1
    iters: int = 10
    placement: str = "random"
    region: Intention | None = None
    ghost_rate: float = 1.0  # effect-patch: probability of a ghost per scenario
    ghost_x_range: tuple[float, float] | None = None  # effect-patch longitudinal range override
    patch_radius: int = 16
    name: str = ""

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"attack kind must be one of {ATTACK_KINDS}")
        if self.placement not in ("random", "specific"):
            raise ValueError("placement must be 'random' or 'specific'")
        if self.region is not None:
            object.__setattr__(self, "region", Intention(self.region))
        if self.kind == "effect-perturb" and not 0 <= self.level <= 4:
            raise ValueError("effect-perturb level must be in 0..4")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "none":
            return "none"
        if self.kind == "effect-perturb":
            return f"effect-perturb-{self.level}"
        if self.kind == "pgd":
            return f"pgd-a{self.alpha:g}-e{self.eps:g}-n{self.iters}"
        where = self.placement if self.region is None else f"{self.placement}-{self.region.value}"
        return f"{self.kind}-{where}"

    def placement_region(self, intention: Intention) -> Intention | None:
        if self.placement != "specific":
            return None
        return self.region or intention


def perturbation_sweep() -> tuple[AttackSetting, ...]:
    return tuple(AttackSetting("effect-perturb", level=n) for n in range(5))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_scenarios: int = 600
    road_mix: float = 0.5
    intentions: tuple[Intention, ...] = INTENTIONS
    sweep: tuple[AttackSetting, ...] = (AttackSetting(),)
    detector: str = "gt"  # "gt" passthrough or "surrogate"
    theta_path: str | None = None
    patch_path: str | None = None
    patch_epochs: int = 100
    algo: Algo = Algo.ASTAR
    scenario_docs: tuple = ()  # inline scenario documents replacing the generated suite
    out_dir: str | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "intentions", tuple(Intention(i) for i in self.intentions))
        object.__setattr__(self, "sweep", tuple(self.sweep))
        object.__setattr__(self, "algo", Algo(self.algo))
        object.__setattr__(self, "scenario_docs", tuple(self.scenario_docs))
        if self.n_scenarios < 1:
            raise ValueError("n_scenarios must be >= 1")
        if not self.sweep:
            raise ValueError("sweep must be non-empty")
        if not self.intentions:
            raise ValueError("at least one intention is required")
        if self.detector not in ("gt", "surrogate"):
            raise ValueError("detector must be 'gt' or 'surrogate'")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if not 0.0 <= self.road_mix <= 1.0:
            raise ValueError("road_mix must be in [0, 1]")
        labels = [s.label for s in self.sweep]
        if len(set(labels)) != len(labels):
            raise ValueError("attack settings must have distinct labels")

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, Enum):
                return v.value
            if isinstance(v, dict):
                return {k: enc(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            return v

        d = asdict(self)
        d.pop("out_dir")
        d.pop("jobs")
        return enc(d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class Cell:
    """Result of one (scenario, setting, intention) evaluation."""

    setting: int
    outcome: ScenarioOutcome
    ap_parts: tuple  # per difficulty: (scores, is_tp, n_gt)
    expanded: int = 0
    cost: float | None = None
    attack_intentions: tuple[str, ...] = ()  # lanes holding ghost boxes, by intention


@dataclass
class ExperimentResult:
    report: MetricsReport
    cells: list[Cell]
    manifest: dict
    csv: str


# --- per-process resources ------------------------------------------------

_DETECTORS: dict[str, DetectorSurrogate] = {}


def _detector(path: str | None) -> DetectorSurrogate:
    key = str(path or DEFAULT_THETA)
    if key not in _DETECTORS:
        _DETECTORS[key] = DetectorSurrogate.load(key)
    return _DETECTORS[key]


def patch_dataset(seed: int, n_images: int = 10) -> list:
    """The rendered (image, labels) set patches are trained on."""
    rng = rng_for(seed, "patch-dataset")
    data = []
    for _ in range(n_images):
        labels = random_layout(rng, int(rng.integers(1, 4)))
        data.append((render(labels), labels))
    return data


def patch_training_config(seed: int, radius: int = 16, epochs: int = 100) -> PatchTrainingConfig:
    return PatchTrainingConfig(epochs=epochs, radius=radius, seed=derive_seed(seed, "patch"))


def train_default_patch(d: DetectorSurrogate, seed: int, radius: int, epochs: int) -> np.ndarray:
    """Patch trained on ten rendered layouts with a ghost target under it."""
    return train_patch(d, patch_dataset(seed), patch_training_config(seed, radius, epochs)).patch


def _ap_parts(boxes: Sequence[DetectedBox3D], gts: Sequence[DetectedBox3D]) -> tuple:
    iou = iou_matrix(boxes, gts)
    return tuple(match_detections(boxes, gts, 0.7, diff, iou) for diff in DIFFICULTIES)


def _observe(s: Scenario, setting: AttackSetting, region, cfg, patch) -> list:
    """Detections after the attack, classified for motion."""
    gts = s.ground_truth_boxes
    image_attack = setting.kind in ("pgd", "patch")
    if cfg.detector == "gt" and not image_attack:
        boxes = list(gts)
    else:
        d = _detector(cfg.theta_path)
        img = render(gts)
        if setting.kind == "pgd":
            pc = PerturbationConfig(setting.eps, setting.alpha, setting.iters)
            img = pgd_perturb(d, img, gts, pc)
        elif setting.kind == "patch":
            policy = PlacementPolicy(Placement(setting.placement), region)
            rng = rng_for(cfg.seed, "patch-place", setting.label, region and region.value, s.id)
            img = apply_patch(img, sample_placement(rng, patch, policy))
        boxes = detect(d, img)
    objs = classify_motion(boxes, s.frames)
    if setting.kind == "effect-perturb":
        objs = inject_effects(objs, s, perturbation_effect(setting.level, derive_seed(cfg.seed, setting.label)))
    elif setting.kind == "effect-patch":
        model = EffectModel(
            EffectKind.ON_ROAD_PATCH_GHOST, setting.ghost_rate, setting.placement, region,
            derive_seed(cfg.seed, setting.label), setting.ghost_x_range,
        )
        objs = inject_effects(objs, s, (model,))
    return objs


def evaluate_scenario(s: Scenario, cfg: ExperimentConfig, patches: dict) -> list[Cell]:
    cells = []
    cache: dict = {}
    gt_objects = list(s.objects)
    ctx = select_constraints(s)
    for k, setting in enumerate(cfg.sweep):
        for intention in cfg.intentions:
            region = setting.placement_region(intention)
            key = (k, region)
            try:
                if key not in cache:
                    objs = _observe(s, setting, region, cfg, patches.get(setting.patch_radius))
                    ghosts = [ghost_intention(s, o) for o in objs if o.box.ghost]
                    tags = tuple(sorted({g.value for g in ghosts if g is not None}))
                    cache[key] = (objs, _ap_parts([o.box for o in objs], s.ground_truth_boxes), tags)
                objs, parts, tags = cache[key]
                res = plan(objs, ctx, goal_region(s, intention), algo=cfg.algo, lanes=s.lanes)
                collided = res.success and check_trajectory(res.trajectory, gt_objects).collided
                out = ScenarioOutcome(s.id, intention, res.success, collided)
                cells.append(Cell(k, out, parts, res.expanded_nodes, res.cost, tags))
            except Exception as e:  # a failing module never aborts the sweep
                log.warning("scenario %s %s %s: %r", s.id, setting.label, intention.value, e)
                out = ScenarioOutcome(s.id, intention, False, False, type(e).__name__)
                parts = cache[key][1] if key in cache else tuple(([], [], 0) for _ in DIFFICULTIES)
                cells.append(Cell(k, out, parts))
    return cells


def _evaluate_chunk(args) -> list[Cell]:
    scenarios, cfg, patches = args
    out = []
    for s in scenarios:
        out.extend(evaluate_scenario(s, cfg, patches))
    return out


# --- driver ---------------------------------------------------------------


def load_scenarios(cfg: ExperimentConfig) -> list[Scenario]:
    if cfg.scenario_docs:
        return [scenario_from_dict(doc) for doc in cfg.scenario_docs]
    return generate_suite(cfg.seed, cfg.n_scenarios, cfg.road_mix)


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_report(cfg: ExperimentConfig, cells: Sequence[Cell]) -> MetricsReport:
    report = MetricsReport(notes={"difficulty": "distance bands 15/30/50 m"})
    for k, setting in enumerate(cfg.sweep):
        for intention in cfg.intentions:
            mine = [c for c in cells if c.setting == k and c.outcome.intention is intention]
            ap = []
            for d in range(len(DIFFICULTIES)):
                scores, tp, n = [], [], 0
                for c in mine:
                    if c.ap_parts:
                        scores += c.ap_parts[d][0]
                        tp += c.ap_parts[d][1]
                        n += c.ap_parts[d][2]
                ap.append(eleven_point_ap(scores, tp, n) if n else None)
            report.rows.append(ReportRow.from_outcomes(intention, setting.label, [c.outcome for c in mine], ap))
    return report


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    scenarios = load_scenarios(cfg)
    patches: dict[int, np.ndarray] = {}
    artifacts: dict[str, str] = {}
    uses_surrogate = cfg.detector == "surrogate" or any(s.kind in ("pgd", "patch") for s in cfg.sweep)
    if uses_surrogate:
        theta = cfg.theta_path or DEFAULT_THETA
        artifacts["theta_sha256"] = _sha256_file(theta)
    for s in cfg.sweep:
        if s.kind == "patch" and s.patch_radius not in patches:
            if cfg.patch_path:
                patches[s.patch_radius] = load_patch(cfg.patch_path)[0]
                artifacts["patch_sha256"] = _sha256_file(cfg.patch_path)
            else:
                p = train_default_patch(_detector(cfg.theta_path), cfg.seed, s.patch_radius, cfg.patch_epochs)
                patches[s.patch_radius] = p
                artifacts[f"patch_r{s.patch_radius}_sha256"] = hashlib.sha256(p.tobytes()).hexdigest()

    if cfg.jobs == 1:
        cells = _evaluate_chunk((scenarios, cfg, patches))
    else:
        size = max(1, -(-len(scenarios) // (cfg.jobs * 4)))
        chunks = [scenarios[i : i + size] for i in range(0, len(scenarios), size)]
        with ProcessPoolExecutor(cfg.jobs) as pool:
            cells = [c for part in pool.map(_evaluate_chunk, [(ch, cfg, patches) for ch in chunks]) for c in part]

    report = build_report(cfg, cells)
    csv_text = report_csv(report)
    manifest = {
        "seed": cfg.seed,
        "config": cfg.to_json() | {"scenario_docs": len(cfg.scenario_docs)},
        "config_sha256": cfg.digest(),
        "n_scenarios": len(scenarios),
        "versions": {
            "drivesafe": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "artifacts": artifacts,
        "report_sha256": hashlib.sha256(csv_text.encode()).hexdigest(),
        "errors": sum(1 for c in cells if c.outcome.error),
        "notes": [
            "AP difficulty uses distance bands (15/30/50 m), not KITTI height/occlusion rules",
            "effect-model intensities are a modeling choice, not measured ghost counts",
        ],
        "elapsed_s": round(time.perf_counter() - t0, 3),
        "jobs": cfg.jobs,
    }
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_bytes(csv_text.encode("utf-8"))
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(report, cells, manifest, csv_text)


# --- comparison tables ----------------------------------------------------


def _safe(c: Cell) -> bool:
    return c.outcome.planned and not c.outcome.collided


def intention_consistency(
    cfg: ExperimentConfig, ghost_rate: float = 1.0, ghost_x_range=None
) -> dict:
    """Safety per (patch region, intention) with drops against the clean run.

    Rows are the three specific regions plus random placement; the matrix
    diagonal holds the matching-intention degradations. For random placement
    each cell is split by whether the ghost landed in the evaluated
    intention's lane, and the non-matching drop is measured on those cells
    against the same cells without attack.
    """
    kw = dict(ghost_rate=ghost_rate, ghost_x_range=ghost_x_range)
    sweep = [AttackSetting("none")]
    sweep += [AttackSetting("effect-patch", placement="specific", region=r, **kw) for r in INTENTIONS]
    sweep.append(AttackSetting("effect-patch", placement="random", **kw))
    res = run_experiment(replace(cfg, sweep=tuple(sweep), intentions=INTENTIONS, out_dir=None))
    base = {i: res.report.get(i, "none").m_saf for i in INTENTIONS}
    table = {}
    for s in sweep[1:]:
        row_key = s.region.value if s.region else "random"
        table[row_key] = {
            i.value: {
                "m_saf": res.report.get(i, s.label).m_saf,
                "drop": base[i] - res.report.get(i, s.label).m_saf,
            }
            for i in INTENTIONS
        }
    clean = {(c.outcome.scenario_id, c.outcome.intention): _safe(c) for c in res.cells if c.setting == 0}
    rand_k = len(sweep) - 1
    split = {True: [], False: []}
    for c in res.cells:
        if c.setting == rand_k:
            key = (c.outcome.scenario_id, c.outcome.intention)
            split[c.outcome.intention.value in c.attack_intentions].append(clean[key] - _safe(c))
    diag = [table[i.value][i.value]["drop"] for i in INTENTIONS]
    off = [table[r.value][i.value]["drop"] for r in INTENTIONS for i in INTENTIONS if r is not i]
    return {
        "baseline": {i.value: base[i] for i in INTENTIONS},
        "table": table,
        "specific_matching_drop": float(np.mean(diag)),
        "specific_nonmatching_drop": float(np.mean(off)),
        "random_drop": float(np.mean([table["random"][i.value]["drop"] for i in INTENTIONS])),
        "random_matching_drop": float(np.mean(split[True])) if split[True] else 0.0,
        "random_nonmatching_drop": float(np.mean(split[False])) if split[False] else 0.0,
        "report": res.report,
    }


def planner_comparison(cfg: ExperimentConfig) -> list[dict]:
    """A* versus greedy best-first on the same sweep."""
    rows = []
    for algo in (Algo.ASTAR, Algo.GBFS):
        t0 = time.perf_counter()
        res = run_experiment(replace(cfg, algo=algo, out_dir=None))
        elapsed = time.perf_counter() - t0
        for r in res.report.sorted_rows():
            k = [s.label for s in cfg.sweep].index(r.setting)
            mine = [c for c in res.cells if c.setting == k and c.outcome.intention is r.intention]
            costs = [c.cost for c in mine if c.cost is not None]
            rows.append({
                "algo": algo.value,
                "intention": r.intention.value,
                "setting": r.setting,
                "m_suc": r.m_suc,
                "m_cls": r.m_cls,
                "m_saf": r.m_saf,
                "mean_expanded": float(np.mean([c.expanded for c in mine])),
                "mean_cost": float(np.mean(costs)) if costs else None,
                "elapsed_s": elapsed,
            })
    return rows


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    def fmt(v):
        if v is None:
            return "NA"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[c for c in columns]] + [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells)
