"""Command-line entry points.

Subcommands: build-map, localize, evaluate, synth, selftest.
Exit codes: 0 success; 1 IO error; 2 validation error; 3 build/solve failure;
4 no match. Machine-parsable output goes to stdout (one JSON object last);
diagnostics to stderr. Every run records a manifest with the full effective
configuration and sha256 hashes of its inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .core import (
    FormatError,
    GsflocError,
    ValidationError,
    default_taxonomy,
    load_cloud,
    save_cloud,
)
from .pipeline import BuildError, build_map, load_map, localize, save_map
from .synth import SceneSpec, generate_scene, run_benchmark, sample_query_poses

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_BUILD = 3
EXIT_NOMATCH = 4


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _effective_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.set:
        cfg.apply_overrides(args.set)
    return cfg


def _manifest(command: str, cfg: RunConfig, inputs: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "effective_config": cfg.to_dict(),
        "inputs": {str(k): _sha256_file(k) for k in inputs.values() if k is not None},
    }


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _add_common(p) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. sim.yaw_samples=4")
    p.add_argument("--threads", type=int, default=1,
                   help="cap on parallel GP fits during graph construction")


def _load_input_cloud(args, taxonomy):
    return load_cloud(
        args.points, args.labels, args.logits, num_classes=taxonomy.num_classes
    )


def cmd_build_map(args) -> int:
    cfg = _effective_config(args)
    taxonomy = default_taxonomy()
    cloud = _load_input_cloud(args, taxonomy)
    ref = build_map(cloud, taxonomy, cfg, threads=args.threads)
    out = Path(args.out)
    save_map(ref, out)
    manifest = _manifest(
        "build-map", cfg,
        {"points": args.points, "labels": args.labels, "logits": args.logits},
    )
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _emit(
        {
            "bundle": str(out),
            "instances": ref.graph.num_instances,
            "descriptors": len(ref.index.descriptors),
        }
    )
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = _effective_config(args)
    if args.no_gsf:
        cfg.pipeline.use_gsf_filter = False
    ref = load_map(args.map)
    cfg_map = ref.config
    # query-side overrides ride on top of the bundle's build-time config
    merged = RunConfig.from_dict(cfg_map.to_dict())
    merged.sim = cfg.sim
    merged.solver = cfg.solver
    merged.matching = cfg.matching
    merged.pipeline = cfg.pipeline
    cloud = _load_input_cloud(args, ref.taxonomy)
    result = localize(cloud, ref, merged, threads=args.threads)
    status = result.to_dict(include_timings=not args.no_timings)
    status["manifest"] = _manifest(
        "localize", merged,
        {"points": args.points, "labels": args.labels, "logits": args.logits},
    )
    if result.pose is not None:
        print(" ".join(repr(float(v)) for v in result.pose.matrix_3x4().ravel()))
    _emit(status)
    if result.status == "success":
        return EXIT_OK
    return EXIT_NOMATCH if result.status == "no-match" else EXIT_BUILD


def _load_spec_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ValidationError(f"spec file {path}: line {e.lineno}, column {e.colno}: {e.msg}")


def cmd_synth(args) -> int:
    doc = _load_spec_file(args.spec)
    spec = SceneSpec.from_dict(doc)
    if args.seed is not None:
        spec.seed = args.seed
    taxonomy = default_taxonomy()
    cloud, gt = generate_scene(spec, taxonomy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_cloud(cloud, out / "scene.points", out / "scene.labels", out / "scene.logits")
    (out / "ground_truth.json").write_text(
        json.dumps(
            {
                "instances": [
                    {
                        "label": int(g.label),
                        "class": taxonomy.name(int(g.label)),
                        "centroid": [float(v) for v in g.centroid],
                        "points": g.count,
                    }
                    for g in gt
                ]
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    manifest = {
        "command": "synth",
        "version": __version__,
        "spec": spec.to_dict(),
        "inputs": {"spec": _sha256_file(args.spec)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _emit({"out": str(out), "points": cloud.n, "instances": len(gt)})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = _load_spec_file(args.spec)
    for key in doc:
        if key not in ("map", "queries", "config"):
            raise ValidationError(f"benchmark spec: unknown field {key!r}")
    if "map" not in doc:
        raise ValidationError("benchmark spec: 'map' field is required")
    map_spec = SceneSpec.from_dict(doc["map"])
    if args.seed is not None:
        map_spec.seed = args.seed
    q = doc.get("queries", {})
    for key in q:
        if key not in ("count", "range_max", "dropout", "noise_sigma", "region_half", "z"):
            raise ValidationError(f"benchmark spec: queries: unknown field {key!r}")

    cfg = _effective_config(args)
    if "config" in doc:
        from .config import _apply_dict

        _apply_dict(cfg, doc["config"], prefix="")

    count = int(q.get("count", 20))
    half = float(q.get("region_half", map_spec.extent / 4.0))
    poses = sample_query_poses(
        count, seed=[map_spec.seed, 1], half=half, z=float(q.get("z", 1.8))
    )
    report = run_benchmark(
        map_spec,
        poses,
        cfg,
        range_max=float(q.get("range_max", 60.0)),
        dropout_rate=float(q.get("dropout", 0.3)),
        noise_sigma=float(q.get("noise_sigma", 0.03)),
        threads=args.threads,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv", include_timings=not args.no_timings)
    summary = {"aggregates": report.aggregates, "spec": map_spec.to_dict()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = _manifest("evaluate", cfg, {"spec": args.spec})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _emit(summary["aggregates"])
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Quick oracle-equivalence checks of the numerical core."""
    from scipy.linalg import inv

    from .gsf import GpHyperParams, fit_gsf, gsf_predict, matern32_matrix
    from .matching import ConsistencyGraph, Correspondence, brute_force_max_clique, max_clique
    from .pose_solver import WeightedCorrespondenceSet, weighted_kabsch
    from .core import RigidTransform, rotation_angle_deg, rot_z
    from .gsf import GpPopulation
    from .wasserstein import w2_squared

    rng = np.random.default_rng(7)
    ok = True

    def report(name, passed):
        nonlocal ok
        ok = ok and passed
        print(f"{'PASS' if passed else 'FAIL'} {name}")

    # GP prediction vs explicit-inverse oracle
    worst = 0.0
    for _ in range(20):
        m, g, d = rng.integers(3, 12), rng.integers(1, 6), rng.integers(1, 4)
        X = rng.uniform(-3, 3, (m, 3))
        Y = rng.normal(size=(m, d))
        labels = rng.integers(0, 3, m)
        hyper = GpHyperParams(kappa=1.5, sigma_y=0.2)
        fld = fit_gsf(X, Y, labels, hyper, budget=m, seed=0)
        Q = rng.uniform(-3, 3, (g, 3))
        mu, Sigma = gsf_predict(fld, Q)
        K = matern32_matrix(fld.X, fld.X, 1.5) + 0.04 * np.eye(fld.m)
        kqx = matern32_matrix(Q, fld.X, 1.5)
        mu_o = kqx @ inv(K) @ fld.Y
        S_o = matern32_matrix(Q, Q, 1.5) - kqx @ inv(K) @ kqx.T
        worst = max(worst, np.abs(mu - mu_o).max(), np.abs(Sigma - 0.5 * (S_o + S_o.T)).max())
    report(f"gp-oracle (max abs dev {worst:.2e})", worst < 1e-9)

    # clique exactness on random graphs
    agree = True
    for _ in range(30):
        n = int(rng.integers(4, 13))
        adj = np.triu(rng.random((n, n)) < 0.5, 1)
        adj = adj | adj.T
        nodes = [Correspondence(i, i, float(rng.uniform(0.1, 1.0)), 1) for i in range(n)]
        gph = ConsistencyGraph(nodes, adj, 1.0)
        agree = agree and max_clique(gph) == brute_force_max_clique(gph)
    report("max-clique vs brute force", agree)

    # 1-D analytic Wasserstein
    pa = GpPopulation(np.zeros((1, 3)), np.array([[0.0]]), np.array([[1.0]]), np.ones(1))
    pb = GpPopulation(np.zeros((1, 3)), np.array([[3.0]]), np.array([[1.0]]), np.ones(1))
    report("wasserstein 1-D analytic", abs(w2_squared(pa, pb) - 9.0) < 1e-10)

    # pose recovery
    worst_t = worst_r = 0.0
    for _ in range(20):
        T = RigidTransform(rot_z(rng.uniform(0, 2 * np.pi)), rng.uniform(-5, 5, 3))
        q = rng.uniform(-10, 10, (8, 3))
        p = T.apply(q)
        est = weighted_kabsch(WeightedCorrespondenceSet(p, q, rng.uniform(0.2, 1.0, 8)))
        te = float(np.linalg.norm(est.t - T.t))
        re_ = rotation_angle_deg(T.R.T @ est.R)
        worst_t, worst_r = max(worst_t, te), max(worst_r, re_)
    report(f"kabsch recovery (worst {worst_t:.1e} m / {worst_r:.1e} deg)",
           worst_t < 1e-9 and worst_r < 1e-7)

    return EXIT_OK if ok else EXIT_BUILD


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gsfloc",
        description="One-shot LiDAR global localization with Gaussian semantic fields",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="build a reference map bundle from a cloud")
    p.add_argument("--points", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--logits")
    p.add_argument("--out", required=True, help="bundle output directory")
    _add_common(p)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("localize", help="localize a query scan against a map bundle")
    p.add_argument("--map", required=True, help="map bundle directory")
    p.add_argument("--points", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--logits")
    p.add_argument("--no-gsf", action="store_true", help="disable the GSF fine filter")
    p.add_argument("--no-timings", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene")
    p.add_argument("--spec", required=True, help="scene spec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="run a synthetic localization benchmark")
    p.add_argument("--spec", required=True, help="benchmark spec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-timings", action="store_true",
                   help="omit timing columns for byte-reproducible CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("selftest", help="run quick oracle-equivalence checks")
    p.set_defaults(func=cmd_selftest)

    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except BuildError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BUILD
    except GsflocError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BUILD


if __name__ == "__main__":
    sys.exit(main())
