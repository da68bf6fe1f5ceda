import numpy as np
import pytest

from gsfloc.core import SemanticPointCloud, ValidationError, one_hot_logits, transform_cloud
from gsfloc.scene_graph import (
    ClusterParams,
    GraphBuildConfig,
    build_scene_graph,
    cluster_instances,
    load_scene_graph,
    radius_query,
    save_scene_graph,
)

from conftest import random_transform, small_scene_spec


def make_cloud(points, labels, num_classes=12):
    labels = np.asarray(labels)
    return SemanticPointCloud(points, labels, one_hot_logits(labels, num_classes))


def blob(rng, center, n=15, scale=0.1):
    return np.asarray(center) + rng.normal(0, scale, size=(n, 3))


def brute_force_clusters(points, labels, taxonomy, params):
    """O(N^2) union-find over the full pairwise distance matrix."""
    out = []
    for cid in taxonomy.instantiable_ids():
        idx = np.nonzero(labels == cid)[0]
        if idx.size == 0:
            continue
        pts = points[idx]
        parent = list(range(idx.size))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        thr = params.threshold_for(cid)
        for i in range(idx.size):
            for j in range(i + 1, idx.size):
                if np.linalg.norm(pts[i] - pts[j]) <= thr:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
        groups = {}
        for i in range(idx.size):
            groups.setdefault(find(i), []).append(int(idx[i]))
        for g in groups.values():
            if len(g) >= params.min_cluster_size:
                out.append((cid, frozenset(g)))
    return set(out)


class TestClustering:
    def test_two_separated_blobs(self, taxonomy):
        rng = np.random.default_rng(0)
        pole = taxonomy.id_of("pole")
        pts = np.vstack([blob(rng, [0, 0, 0]), blob(rng, [10, 0, 0])])
        cloud = make_cloud(pts, np.full(30, pole))
        insts = cluster_instances(cloud, taxonomy, ClusterParams(min_cluster_size=5))
        assert len(insts) == 2

    def test_non_instantiable_filtered(self, taxonomy):
        rng = np.random.default_rng(1)
        road = taxonomy.id_of("road")
        cloud = make_cloud(blob(rng, [0, 0, 0], n=40), np.full(40, road))
        assert cluster_instances(cloud, taxonomy, ClusterParams()) == []

    def test_min_cluster_size(self, taxonomy):
        rng = np.random.default_rng(2)
        pole = taxonomy.id_of("pole")
        cloud = make_cloud(blob(rng, [0, 0, 0], n=9), np.full(9, pole))
        assert cluster_instances(cloud, taxonomy, ClusterParams(min_cluster_size=10)) == []

    def test_matches_brute_force_union_find(self, taxonomy):
        rng = np.random.default_rng(3)
        for trial in range(8):
            chunks, labels = [], []
            for _ in range(rng.integers(2, 6)):
                cid = int(rng.choice(taxonomy.instantiable_ids()))
                c = rng.uniform(-15, 15, 3)
                n = int(rng.integers(4, 20))
                chunks.append(blob(rng, c, n=n, scale=rng.uniform(0.05, 0.8)))
                labels.append(np.full(n, cid))
            pts = np.vstack(chunks)
            labels = np.concatenate(labels)
            cloud = make_cloud(pts, labels)
            params = ClusterParams(min_cluster_size=3)
            got = {
                (inst.label, frozenset(int(i) for i in inst.point_indices))
                for inst in cluster_instances(cloud, taxonomy, params)
            }
            want = brute_force_clusters(pts, labels, taxonomy, params)
            assert got == want, f"trial {trial}"

    def test_permutation_invariance(self, taxonomy):
        rng = np.random.default_rng(4)
        pole = taxonomy.id_of("pole")
        pts = np.vstack([blob(rng, [0, 0, 0]), blob(rng, [8, 0, 0]), blob(rng, [0, 9, 0])])
        labels = np.full(45, pole)
        perm = rng.permutation(45)
        a = cluster_instances(make_cloud(pts, labels), taxonomy, ClusterParams(min_cluster_size=5))
        b = cluster_instances(make_cloud(pts[perm], labels[perm]), taxonomy,
                              ClusterParams(min_cluster_size=5))
        assert len(a) == len(b)
        for ia, ib in zip(a, b):
            np.testing.assert_allclose(ia.centroid, ib.centroid, atol=1e-12)

    def test_rigid_equivariance(self, taxonomy):
        rng = np.random.default_rng(5)
        pole = taxonomy.id_of("pole")
        pts = np.vstack([blob(rng, [0, 0, 0]), blob(rng, [12, 0, 0])])
        cloud = make_cloud(pts, np.full(30, pole))
        T = random_transform(rng)
        a = cluster_instances(cloud, taxonomy, ClusterParams(min_cluster_size=5))
        b = cluster_instances(transform_cloud(cloud, T), taxonomy,
                              ClusterParams(min_cluster_size=5))
        got = sorted(tuple(np.round(T.apply(i.centroid), 6)) for i in a)
        want = sorted(tuple(np.round(i.centroid, 6)) for i in b)
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_centroid_invariant_and_no_duplicates(self, taxonomy):
        from gsfloc.synth import generate_scene

        cloud, _ = generate_scene(small_scene_spec(seed=21), taxonomy)
        insts = cluster_instances(cloud, taxonomy, ClusterParams(
            thresholds={taxonomy.id_of("pole"): 0.5, taxonomy.id_of("trunk"): 0.5,
                        taxonomy.id_of("traffic-sign"): 0.5}))
        seen = set()
        for inst in insts:
            np.testing.assert_allclose(
                inst.centroid, cloud.points[inst.point_indices].mean(axis=0), atol=1e-9
            )
            assert (cloud.labels[inst.point_indices] == inst.label).all()
            members = set(int(i) for i in inst.point_indices)
            assert not (members & seen)
            seen |= members
        # ids dense 0..K-1, sorted by (label, centroid)
        assert [i.id for i in insts] == list(range(len(insts)))
        keys = [(i.label, tuple(i.centroid)) for i in insts]
        assert keys == sorted(keys)


class TestRadiusQuery:
    def test_singleton(self, taxonomy):
        cloud = make_cloud(np.array([[0, 0, 0], [5, 0, 0], [0, 5, 0.0]]), [0, 0, 0])
        assert list(radius_query(cloud, [0, 0, 0], 0.001)) == [0]

    def test_whole_cloud(self, taxonomy):
        rng = np.random.default_rng(6)
        cloud = make_cloud(rng.normal(size=(40, 3)), np.zeros(40, int))
        assert list(radius_query(cloud, [0, 0, 0], 1e3)) == list(range(40))

    def test_linear_scan_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            pts = rng.uniform(-10, 10, (rng.integers(1, 200), 3))
            cloud = make_cloud(pts, np.zeros(len(pts), int))
            center = rng.uniform(-10, 10, 3)
            r = rng.uniform(0.5, 12)
            got = radius_query(cloud, center, r)
            want = np.nonzero(np.linalg.norm(pts - center, axis=1) <= r)[0]
            assert np.array_equal(got, want)

    def test_invalid_radius(self):
        cloud = make_cloud(np.zeros((1, 3)), [0])
        with pytest.raises(ValidationError):
            radius_query(cloud, [0, 0, 0], 0.0)


class TestBuildGraph:
    def test_no_instantiable_points(self, taxonomy):
        rng = np.random.default_rng(8)
        road = taxonomy.id_of("road")
        cloud = make_cloud(blob(rng, [0, 0, 0], n=50), np.full(50, road))
        graph = build_scene_graph(cloud, taxonomy, GraphBuildConfig())
        assert graph.num_instances == 0

    def test_planted_poles_get_fields(self, taxonomy):
        from gsfloc.synth import InstanceTemplate, SceneSpec, generate_scene

        spec = SceneSpec(extent=60, templates=[InstanceTemplate("pole", 5, 120)], seed=9)
        cloud, gt = generate_scene(spec, taxonomy)
        cfg = GraphBuildConfig()
        cfg.cluster.thresholds = {taxonomy.id_of("pole"): 0.5}
        graph = build_scene_graph(cloud, taxonomy, cfg)
        assert graph.num_instances == 5
        assert all(graph.fields[i.id] is not None for i in graph.instances)
        got = sorted(tuple(np.round(i.centroid, 4)) for i in graph.instances)
        want = sorted(tuple(np.round(g.centroid, 4)) for g in gt)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_neighborhood_radius_oracle(self, taxonomy):
        from gsfloc.synth import generate_scene

        cloud, _ = generate_scene(small_scene_spec(seed=10), taxonomy)
        cfg = GraphBuildConfig()
        graph = build_scene_graph(cloud, taxonomy, cfg)
        inst = graph.instances[0]
        fld = graph.fields[inst.id]
        want = radius_query(cloud, inst.centroid, cfg.neighborhood_radius)
        # training points are a subset of the neighborhood, in local coordinates
        assert set(int(i) for i in fld.source_indices).issubset(set(range(len(want))))
        neighborhood_classes = set(int(c) for c in cloud.labels[want])
        assert len(neighborhood_classes) > 1  # all classes included, not only instantiable

    def test_threads_match_serial(self, taxonomy):
        from gsfloc.synth import generate_scene

        cloud, _ = generate_scene(small_scene_spec(seed=12), taxonomy)
        g1 = build_scene_graph(cloud, taxonomy, GraphBuildConfig(), threads=1)
        g4 = build_scene_graph(cloud, taxonomy, GraphBuildConfig(), threads=4)
        for a, b in zip(g1.instances, g4.instances):
            assert np.array_equal(g1.fields[a.id].X, g4.fields[b.id].X)


class TestSerialization:
    def test_round_trip(self, taxonomy, tmp_path):
        from gsfloc.synth import generate_scene

        cloud, _ = generate_scene(small_scene_spec(seed=13), taxonomy)
        graph = build_scene_graph(cloud, taxonomy, GraphBuildConfig())
        save_scene_graph(graph, tmp_path / "g.json", tmp_path / "g.npz")
        again = load_scene_graph(tmp_path / "g.json", tmp_path / "g.npz")
        assert again.num_instances == graph.num_instances
        np.testing.assert_array_equal(again.cloud.points, graph.cloud.points)
        for a, b in zip(graph.instances, again.instances):
            assert a.id == b.id and a.label == b.label
            np.testing.assert_allclose(a.centroid, b.centroid, rtol=1e-7)
            np.testing.assert_array_equal(a.point_indices, b.point_indices)
            fa, fb = graph.fields[a.id], again.fields[b.id]
            np.testing.assert_allclose(fa.X, fb.X, rtol=1e-7)
            np.testing.assert_allclose(fa.Y, fb.Y, rtol=1e-7)
            np.testing.assert_allclose(fa.alpha, fb.alpha, rtol=1e-6, atol=1e-9)
