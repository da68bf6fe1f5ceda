"""Synthetic labeled-scene generation, scan simulation, and benchmark reporting.

Scenes are deterministic under their seed: instances (poles, trunks, signs,
cars, trucks) are placed with enough separation that ground-truth clustering
is unambiguous, on top of a road plane and vegetation blobs whose class
scores vary smoothly with position. The mirrored-twin mode creates two
congruent sub-areas (related by a 180-degree yaw isometry) whose instantiable
layout is identical and whose background logits differ by a configurable
perturbation magnitude.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .core import (
    GsflocError,
    LabelTaxonomy,
    RigidTransform,
    SemanticPointCloud,
    ValidationError,
    default_taxonomy,
    one_hot_logits,
    rot_z,
)

TIMING_KEYS = ("graph", "probe", "match", "clique", "solve", "total")


class GenerationError(GsflocError):
    """Instance placement could not satisfy the separation constraint."""


@dataclass
class InstanceTemplate:
    class_name: str
    count: int
    points_per_instance: int


@dataclass
class BackgroundSpec:
    road_points: int = 4000
    vegetation_blobs: int = 12
    vegetation_points_per_blob: int = 350
    field_scale: float = 6.0  # length scale of the smooth class-score field
    score_amplitude: float = 0.25  # logit modulation on the nature channels


@dataclass
class SceneSpec:
    extent: float = 80.0  # square scene, [-extent/2, extent/2]^2
    templates: list[InstanceTemplate] = dc_field(default_factory=list)
    background: BackgroundSpec = dc_field(default_factory=BackgroundSpec)
    symmetry: str = "none"  # "none" | "mirrored-twin"
    twin_perturbation: float = 0.0  # mean |class-score deviation| between twins
    seed: int = 0
    confidence: float = 0.9
    min_separation: float | None = None  # centroid spacing; derived when None

    def __post_init__(self):
        if self.extent <= 0:
            raise ValidationError(f"extent must be > 0, got {self.extent}")
        if self.symmetry not in ("none", "mirrored-twin"):
            raise ValidationError(f"unknown symmetry directive {self.symmetry!r}")
        if self.twin_perturbation < 0:
            raise ValidationError("twin_perturbation must be >= 0")
        for t in self.templates:
            if t.count < 0 or t.points_per_instance <= 0:
                raise ValidationError(
                    f"template {t.class_name}: counts must be >= 0 and points > 0"
                )

    def to_dict(self) -> dict:
        return {
            "extent": self.extent,
            "seed": self.seed,
            "symmetry": self.symmetry,
            "twin_perturbation": self.twin_perturbation,
            "confidence": self.confidence,
            "min_separation": self.min_separation,
            "instances": [
                {"class": t.class_name, "count": t.count, "points": t.points_per_instance}
                for t in self.templates
            ],
            "background": {
                "road_points": self.background.road_points,
                "vegetation_blobs": self.background.vegetation_blobs,
                "vegetation_points_per_blob": self.background.vegetation_points_per_blob,
                "field_scale": self.background.field_scale,
                "score_amplitude": self.background.score_amplitude,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {
            "extent",
            "seed",
            "symmetry",
            "twin_perturbation",
            "confidence",
            "min_separation",
            "instances",
            "background",
        }
        for k in d:
            if k not in known:
                raise ValidationError(f"unknown scene spec field {k!r}")
        templates = []
        for i, rec in enumerate(d.get("instances", [])):
            for k in rec:
                if k not in ("class", "count", "points"):
                    raise ValidationError(f"instances[{i}]: unknown field {k!r}")
            if "class" not in rec or "count" not in rec:
                raise ValidationError(f"instances[{i}]: 'class' and 'count' are required")
            templates.append(
                InstanceTemplate(rec["class"], int(rec["count"]), int(rec.get("points", 150)))
            )
        bg = BackgroundSpec()
        for k, v in d.get("background", {}).items():
            if not hasattr(bg, k):
                raise ValidationError(f"background: unknown field {k!r}")
            setattr(bg, k, type(getattr(bg, k))(v))
        return cls(
            extent=float(d.get("extent", 80.0)),
            templates=templates,
            background=bg,
            symmetry=d.get("symmetry", "none"),
            twin_perturbation=float(d.get("twin_perturbation", 0.0)),
            seed=int(d.get("seed", 0)),
            confidence=float(d.get("confidence", 0.9)),
            min_separation=(
                None if d.get("min_separation") is None else float(d["min_separation"])
            ),
        )


@dataclass
class GroundTruthInstance:
    label: int
    centroid: np.ndarray
    count: int


@dataclass
class TwinInfo:
    isometry: RigidTransform  # maps twin-1 coordinates onto twin 2
    center_1: np.ndarray
    center_2: np.ndarray
    half: float  # half-size of each twin's square region
    measured_deviation: float  # mean |class-score change| over twin-2 background


# footprint xy radius per class, used to derive separation distances
_FOOTPRINT_RADIUS = {
    "pole": 0.2,
    "trunk": 0.4,
    "traffic-sign": 0.5,
    "car": 2.4,
    "truck": 3.9,
}


def _sample_box_surface(rng, n, lx, ly, lz):
    areas = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.zeros((n, 3))
    for f in range(6):
        m = face == f
        if not m.any():
            continue
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        dims = np.array([lx, ly, lz])
        pts[m, axis] = sign * dims[axis] / 2.0
        pts[m, others[0]] = u[m, 0] * dims[others[0]]
        pts[m, others[1]] = u[m, 1] * dims[others[1]]
    return pts


def _instance_points(rng, class_name: str, n: int) -> np.ndarray:
    """Points of one instance in its own frame, standing on z=0."""
    if class_name == "pole":
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = 0.15 * np.sqrt(rng.uniform(0, 1, n))
        z = rng.uniform(0, 4.0, n)
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang), z])
    if class_name == "trunk":
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = 0.3 * np.sqrt(rng.uniform(0, 1, n))
        z = rng.uniform(0, 3.0, n)
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang), z])
    if class_name == "traffic-sign":
        n_pole = max(1, int(0.4 * n))
        ang = rng.uniform(0, 2 * np.pi, n_pole)
        rad = 0.06 * np.sqrt(rng.uniform(0, 1, n_pole))
        zp = rng.uniform(0, 2.3, n_pole)
        pole = np.column_stack([rad * np.cos(ang), rad * np.sin(ang), zp])
        n_plate = n - n_pole
        plate = np.column_stack(
            [
                rng.uniform(-0.35, 0.35, n_plate),
                rng.uniform(-0.01, 0.01, n_plate),
                rng.uniform(2.3, 2.8, n_plate),
            ]
        )
        pts = np.vstack([pole, plate])
        yaw = rng.uniform(0, 2 * np.pi)
        return pts @ rot_z(yaw).T
    if class_name == "car":
        pts = _sample_box_surface(rng, n, 4.2, 1.8, 1.5)
        pts[:, 2] += 0.3 + 1.5 / 2.0
        return pts @ rot_z(rng.uniform(0, 2 * np.pi)).T
    if class_name == "truck":
        pts = _sample_box_surface(rng, n, 7.0, 2.5, 3.0)
        pts[:, 2] += 0.4 + 3.0 / 2.0
        return pts @ rot_z(rng.uniform(0, 2 * np.pi)).T
    raise ValidationError(f"no footprint generator for class {class_name!r}")


def _place_instances(rng, spec: SceneSpec, taxonomy, center, half):
    """Rejection-sampled instance placement inside a square region."""
    max_thresh = 1.0
    placed: list[tuple[np.ndarray, float]] = []  # (xy, footprint radius)
    out = []  # (class id, xy position)
    for tpl in spec.templates:
        cid = taxonomy.id_of(tpl.class_name)
        fr = _FOOTPRINT_RADIUS.get(tpl.class_name, 1.0)
        for _ in range(tpl.count):
            ok = False
            for _attempt in range(500):
                xy = center + rng.uniform(-half + fr, half - fr, size=2)
                if spec.min_separation is not None:
                    required = lambda other_fr: spec.min_separation
                else:
                    required = lambda other_fr: fr + other_fr + 2.0 * max_thresh + 0.5
                if all(
                    np.linalg.norm(xy - pxy) >= required(pfr) for pxy, pfr in placed
                ):
                    ok = True
                    break
            if not ok:
                raise GenerationError(
                    f"could not place {tpl.class_name} after 500 attempts; "
                    f"reduce counts or enlarge the extent"
                )
            placed.append((xy, fr))
            out.append((cid, xy, tpl.class_name, tpl.points_per_instance))
    return out


def _smooth_field(rng, center, half, scale, n_bumps=8):
    """Random smooth scalar field over a square region: sum of signed bumps."""
    centers = center + rng.uniform(-half, half, size=(n_bumps, 2))
    amps = rng.uniform(0.5, 1.0, n_bumps) * rng.choice([-1.0, 1.0], n_bumps)

    def evaluate(xy: np.ndarray) -> np.ndarray:
        d2 = ((xy[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return (np.exp(-d2 / (2.0 * scale**2)) * amps).sum(axis=1)

    return evaluate


def _generate_region(rng, spec: SceneSpec, taxonomy, center, half):
    """Points, intended labels, logits, and ground truth for one region."""
    road_id = taxonomy.id_of("road")
    veg_id = taxonomy.id_of("vegetation")
    terrain_id = taxonomy.id_of("terrain")
    d = taxonomy.num_classes

    chunks, labels, gt = [], [], []
    bg_mask_parts = []

    for cid, xy, cname, n_pts in _place_instances(rng, spec, taxonomy, center, half):
        pts = _instance_points(rng, cname, n_pts)
        pts[:, :2] += xy
        chunks.append(pts)
        labels.append(np.full(n_pts, cid))
        bg_mask_parts.append(np.zeros(n_pts, dtype=bool))
        gt.append(GroundTruthInstance(cid, pts.mean(axis=0), n_pts))

    bg = spec.background
    if bg.road_points > 0:
        road = np.column_stack(
            [
                center[0] + rng.uniform(-half, half, bg.road_points),
                center[1] + rng.uniform(-half, half, bg.road_points),
                np.zeros(bg.road_points),
            ]
        )
        chunks.append(road)
        labels.append(np.full(bg.road_points, road_id))
        bg_mask_parts.append(np.ones(bg.road_points, dtype=bool))

    for _ in range(bg.vegetation_blobs):
        c = center + rng.uniform(-half, half, size=2)
        n = bg.vegetation_points_per_blob
        xy = c + rng.normal(0, 2.0, size=(n, 2))
        z = np.clip(np.abs(rng.normal(0, 1.0, n)), 0, 2.5)
        chunks.append(np.column_stack([xy, z]))
        labels.append(np.full(n, veg_id))
        bg_mask_parts.append(np.ones(n, dtype=bool))

    points = np.vstack(chunks) if chunks else np.zeros((0, 3))
    labels = np.concatenate(labels).astype(np.int64) if labels else np.zeros(0, np.int64)
    bg_mask = (
        np.concatenate(bg_mask_parts) if bg_mask_parts else np.zeros(0, dtype=bool)
    )

    logits = one_hot_logits(labels, d, spec.confidence) if points.shape[0] else np.zeros((0, d))
    if points.shape[0] and bg.score_amplitude > 0:
        fld = _smooth_field(rng, center, half, bg.field_scale)
        s = fld(points[:, :2])
        logits[:, veg_id] += bg.score_amplitude * s
        logits[:, terrain_id] -= bg.score_amplitude * s
    return points, labels, logits, bg_mask, gt


def generate_scene(
    spec: SceneSpec, taxonomy: LabelTaxonomy | None = None
) -> tuple[SemanticPointCloud, list[GroundTruthInstance]]:
    """Build a labeled scene; dispatches to the mirrored-twin generator."""
    if spec.symmetry == "mirrored-twin":
        cloud, gt, _ = generate_mirrored_twin(spec, taxonomy)
        return cloud, gt
    taxonomy = taxonomy or default_taxonomy()
    rng = np.random.default_rng(spec.seed)
    center = np.zeros(2)
    half = spec.extent / 2.0
    points, labels, logits, _, gt = _generate_region(rng, spec, taxonomy, center, half)
    final_labels = np.argmax(logits, axis=1) if points.shape[0] else labels
    return SemanticPointCloud(points, final_labels, logits), gt


def generate_mirrored_twin(
    spec: SceneSpec, taxonomy: LabelTaxonomy | None = None
) -> tuple[SemanticPointCloud, list[GroundTruthInstance], TwinInfo]:
    """Two congruent sub-areas: twin 2 is twin 1 mapped through a 180-degree
    yaw isometry, with its background class scores perturbed by
    `twin_perturbation` (mean absolute per-point deviation)."""
    if spec.symmetry != "mirrored-twin":
        raise ValidationError("spec.symmetry must be 'mirrored-twin'")
    taxonomy = taxonomy or default_taxonomy()
    veg_id = taxonomy.id_of("vegetation")
    rng = np.random.default_rng(spec.seed)

    half = spec.extent / 4.0  # each twin occupies one half of the scene
    c1 = np.array([-spec.extent / 4.0 - 2.0, 0.0])
    iso = RigidTransform(rot_z(np.pi), np.zeros(3))
    c2 = -c1

    pts1, labels1, logits1, bg1, gt1 = _generate_region(rng, spec, taxonomy, c1, half)
    pts2 = iso.apply(pts1)
    logits2 = logits1.copy()

    measured = 0.0
    if spec.twin_perturbation > 0 and bg1.any():
        pattern_f = _smooth_field(rng, c2, half, scale=4.0, n_bumps=10)
        p = pattern_f(pts2[bg1, :2])
        mean_abs = np.mean(np.abs(p))
        if mean_abs <= 0:
            raise GenerationError("degenerate perturbation pattern")
        p = p / mean_abs
        logits2[bg1, veg_id] += spec.twin_perturbation * p
        measured = float(np.mean(np.abs(spec.twin_perturbation * p)))

    points = np.vstack([pts1, pts2])
    logits = np.vstack([logits1, logits2])
    labels = np.argmax(logits, axis=1)
    gt2 = [
        GroundTruthInstance(g.label, iso.apply(g.centroid.reshape(1, 3))[0], g.count)
        for g in gt1
    ]
    info = TwinInfo(iso, np.append(c1, 0.0), np.append(c2, 0.0), half, measured)
    return SemanticPointCloud(points, labels, logits), gt1 + gt2, info


def simulate_scan(
    scene: SemanticPointCloud,
    sensor_pose: RigidTransform,
    range_max: float,
    dropout_rate: float = 0.0,
    noise_sigma: float = 0.0,
    seed=0,
) -> SemanticPointCloud:
    """Range-limited omnidirectional scan expressed in the sensor frame."""
    if not (0.0 <= dropout_rate < 1.0):
        raise ValidationError(f"dropout_rate must be in [0,1), got {dropout_rate}")
    if noise_sigma < 0:
        raise ValidationError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    dist = np.linalg.norm(scene.points - sensor_pose.t, axis=1)
    keep = np.nonzero(dist <= range_max)[0]
    if dropout_rate > 0:
        keep = keep[rng.random(keep.size) >= dropout_rate]
    pts = scene.points[keep]
    if noise_sigma > 0:
        pts = pts + rng.normal(0, noise_sigma, size=pts.shape)
    pts = sensor_pose.inverse().apply(pts)
    logits = None if scene.logits is None else scene.logits[keep]
    return SemanticPointCloud(pts, scene.labels[keep], logits)


def sample_query_poses(count: int, seed, center=(0.0, 0.0), half: float = 20.0, z: float = 1.8):
    """Random sensor poses (position + yaw) inside a square region."""
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(count):
        xy = np.asarray(center) + rng.uniform(-half, half, size=2)
        yaw = rng.uniform(0, 2 * np.pi)
        poses.append(RigidTransform(rot_z(yaw), np.array([xy[0], xy[1], z])))
    return poses


# ---------------------------------------------------------------------------
# Benchmark reporting
# ---------------------------------------------------------------------------


@dataclass
class QueryRow:
    index: int
    seed: int
    gt_pose: RigidTransform
    status: str
    est_pose: RigidTransform | None
    trans_err: float  # nan when no pose
    rot_err: float
    success: bool
    clique_size: int
    inlier_count: int
    timings_ms: dict[str, float]


@dataclass
class EvalReport:
    rows: list[QueryRow]
    aggregates: dict

    @staticmethod
    def compute_aggregates(rows: list[QueryRow]) -> dict:
        n = len(rows)
        succ = [r for r in rows if r.success]
        agg = {
            "queries": n,
            "successes": len(succ),
            "success_rate": (len(succ) / n) if n else 0.0,
        }
        if succ:
            te = np.array([r.trans_err for r in succ])
            re = np.array([r.rot_err for r in succ])
            agg.update(
                mean_ate=float(te.mean()),
                mean_are=float(re.mean()),
                p50_ate=float(np.percentile(te, 50)),
                p90_ate=float(np.percentile(te, 90)),
                p50_are=float(np.percentile(re, 50)),
                p90_are=float(np.percentile(re, 90)),
            )
        else:
            agg.update(
                mean_ate=None, mean_are=None, p50_ate=None, p90_ate=None,
                p50_are=None, p90_are=None,
            )
        return agg

    @classmethod
    def from_rows(cls, rows: list[QueryRow]) -> "EvalReport":
        return cls(rows, cls.compute_aggregates(rows))

    def to_csv(self, include_timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [
            "index", "seed", "status", "success", "trans_err", "rot_err",
            "clique_size", "inlier_count", "gt_pose", "est_pose",
        ]
        if include_timings:
            header += [f"t_{k}_ms" for k in TIMING_KEYS]
        w.writerow(header)
        for r in self.rows:
            row = [
                r.index,
                r.seed,
                r.status,
                int(r.success),
                repr(float(r.trans_err)),
                repr(float(r.rot_err)),
                r.clique_size,
                r.inlier_count,
                " ".join(repr(float(v)) for v in r.gt_pose.matrix_3x4().ravel()),
                (
                    " ".join(repr(float(v)) for v in r.est_pose.matrix_3x4().ravel())
                    if r.est_pose is not None
                    else ""
                ),
            ]
            if include_timings:
                row += [repr(float(r.timings_ms.get(k, 0.0))) for k in TIMING_KEYS]
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path, include_timings: bool = True) -> None:
        Path(path).write_text(self.to_csv(include_timings=include_timings))


def run_benchmark(
    map_spec: SceneSpec,
    query_poses: list[RigidTransform],
    config,
    taxonomy: LabelTaxonomy | None = None,
    range_max: float = 60.0,
    dropout_rate: float = 0.3,
    noise_sigma: float = 0.03,
    threads: int = 1,
) -> EvalReport:
    """Build the map once, localize one simulated scan per pose."""
    from .core import pose_error
    from .pipeline import build_map, localize

    taxonomy = taxonomy or default_taxonomy()
    scene, _ = generate_scene(map_spec, taxonomy)
    ref = build_map(scene, taxonomy, config, threads=threads)

    rows = []
    for i, pose in enumerate(query_poses):
        scan_seed = map_spec.seed * 100003 + i
        scan = simulate_scan(scene, pose, range_max, dropout_rate, noise_sigma, scan_seed)
        t0 = time.perf_counter()
        result = localize(scan, ref, config, threads=threads)
        total_ms = (time.perf_counter() - t0) * 1e3
        timings = dict(result.timings_ms)
        timings["total"] = total_ms
        if result.pose is not None:
            te, re_ = pose_error(result.pose, pose)
        else:
            te, re_ = float("nan"), float("nan")
        success = (
            result.status == "success"
            and te <= config.pipeline.success_trans_m
            and re_ <= config.pipeline.success_rot_deg
        )
        rows.append(
            QueryRow(
                i, scan_seed, pose, result.status, result.pose, te, re_,
                bool(success), result.clique_size, result.inlier_count, timings,
            )
        )
    return EvalReport.from_rows(rows)
