"""Disambiguating geometrically symmetric scenes with semantic fields.

The mirrored-twin benchmark plants two congruent instance constellations whose
surroundings differ only in their vegetation class-score fields. Centroid-only
matching cannot tell the twins apart: the consistency clique for the wrong
twin is exactly as large as for the right one, and the tie-break lands on
whichever twin sorts first. The W2 fine filter scores the surrounding
vegetation distribution, so the full pipeline locks onto the scanned twin.
"""

import numpy as np

from gsfloc.config import RunConfig
from gsfloc.core import RigidTransform, default_taxonomy, pose_error, rot_z
from gsfloc.pipeline import build_map, localize
from gsfloc.synth import InstanceTemplate, SceneSpec, generate_mirrored_twin, simulate_scan

tax = default_taxonomy()
spec = SceneSpec(
    extent=100.0,
    templates=[
        InstanceTemplate("pole", 3, 140),
        InstanceTemplate("trunk", 2, 160),
        InstanceTemplate("traffic-sign", 2, 120),
        InstanceTemplate("car", 2, 260),
    ],
    symmetry="mirrored-twin",
    twin_perturbation=0.5,
    seed=3,
)
cloud, gt, info = generate_mirrored_twin(spec, tax)
k = len(gt) // 2
c1 = np.stack([g.centroid for g in gt[:k]])
c2 = np.stack([g.centroid for g in gt[k:]])
resid = np.abs(info.isometry.apply(c1) - c2).max()
print(f"twin constellations congruent to {resid:.1e} m; "
      f"background class-score deviation {info.measured_deviation:.2f}")

ref = build_map(cloud, tax, RunConfig())

rng = np.random.default_rng(99)
print(f"\n{'scanned':>8} {'GSF':>5} {'status':>9} {'error':>16} {'verdict':>9}")
for trial in range(6):
    twin = trial % 2
    center = (info.center_1 if twin == 0 else info.center_2)[:2]
    xy = center + rng.uniform(-8, 8, 2)
    pose = RigidTransform(rot_z(rng.uniform(0, 2 * np.pi)),
                          np.array([xy[0], xy[1], 1.8]))
    scan = simulate_scan(cloud, pose, range_max=22.0, dropout_rate=0.2,
                         noise_sigma=0.02, seed=1000 + trial)
    for use_gsf in (True, False):
        cfg = RunConfig()
        cfg.pipeline.use_gsf_filter = use_gsf
        res = localize(scan, ref, cfg)
        if res.pose is not None:
            te, re = pose_error(res.pose, pose)
            verdict = "correct" if te <= 5.0 and re <= 10.0 else "WRONG TWIN"
            err = f"{te:7.2f} m {re:5.1f}d"
        else:
            verdict, err = res.status, "-"
        print(f"  twin {twin + 1:>2} {str(use_gsf):>5} {res.status:>9} {err:>16} {verdict:>9}")

print("\nWith the GSF filter off, the solver is handed two equally consistent "
      "cliques and the tie-break picks the same map twin every time; with the "
      "filter on, wrong-twin candidates score large W2 and are rejected.")
