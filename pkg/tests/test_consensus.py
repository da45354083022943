import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import reference_consensus, reference_dbscan, reference_global_medoid
from semfed.consensus import (
    OUTLIER,
    ClusterParams,
    Clustering,
    SelectionRule,
    SelectionStrategy,
    ZeroSumError,
    average_pairwise_distance,
    consensus_for_prompt,
    dbscan,
    medoid,
    normalized_centroid,
    select_consensus_cluster,
    select_representative,
)
from semfed.encoder import EncoderConfig, encode_normalized
from semfed.protocol import make_response

CFG = EncoderConfig()


def unit(*coords):
    vec = np.asarray(coords, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def on_circle(angle):
    """Unit vector in the plane at ``angle`` radians, padded to 4 dims."""
    return np.array([math.cos(angle), math.sin(angle), 0.0, 0.0])


def records(texts, prompt_id="p0", clients=None):
    clients = range(len(texts)) if clients is None else clients
    return [make_response(c, prompt_id, t) for c, t in zip(clients, texts)]


# ------------------------------------------------------------ dbscan


def test_identical_points_form_one_cluster():
    points = [unit(1, 0, 0)] * 4
    clustering = dbscan(points, ClusterParams(eps=0.3, min_pts=2))
    assert clustering.labels == (0, 0, 0, 0)
    assert clustering.num_clusters == 1


def test_far_apart_points_are_outliers():
    points = [unit(1, 0, 0), unit(0, 1, 0), unit(-1, 0, 0)]
    clustering = dbscan(points, ClusterParams(eps=0.3, min_pts=2))
    assert clustering.labels == (OUTLIER, OUTLIER, OUTLIER)
    assert clustering.num_clusters == 0


def test_min_pts_one_makes_singletons_clusters():
    points = [unit(1, 0, 0), unit(0, 1, 0)]
    clustering = dbscan(points, ClusterParams(eps=0.1, min_pts=1))
    assert clustering.labels == (0, 1)


def test_cluster_numbering_follows_smallest_core_index():
    # two groups, the group containing index 0 must be cluster 0
    points = [
        on_circle(0.0),
        on_circle(math.pi / 2),
        on_circle(0.02),
        on_circle(math.pi / 2 + 0.02),
    ]
    clustering = dbscan(points, ClusterParams(eps=0.05, min_pts=2))
    assert clustering.labels == (0, 1, 0, 1)


def test_border_point_joins_lowest_numbered_cluster():
    # two dense groups, each reaching the middle point only through a
    # single bridge core; the middle point itself has three neighbors
    # (itself and the two bridges), below min_pts, so it is a border
    # point claimed by both clusters and must join cluster 0
    mid = on_circle(0.0)
    left = [on_circle(a) for a in (-0.45, -0.85, -0.87, -0.89)]
    right = [on_circle(a) for a in (0.45, 0.85, 0.87, 0.89)]
    points = [mid] + left + right
    clustering = dbscan(points, ClusterParams(eps=0.12, min_pts=4))
    assert clustering.labels[1:5] == (0, 0, 0, 0)
    assert clustering.labels[5:9] == (1, 1, 1, 1)
    assert clustering.labels[0] == 0


def test_dbscan_matches_reference_on_random_instances():
    rng = np.random.default_rng(20240817)
    for _ in range(150):
        k = int(rng.integers(1, 9))
        dim = int(rng.choice([3, 8]))
        centers = rng.normal(size=(int(rng.integers(1, 4)), dim))
        points = []
        for _ in range(k):
            center = centers[int(rng.integers(len(centers)))]
            points.append(
                np.asarray(center + 0.2 * rng.normal(size=dim), dtype=np.float64)
            )
        points = [p / np.linalg.norm(p) for p in points]
        eps = float(rng.uniform(0.05, 0.8))
        min_pts = int(rng.integers(1, 4))
        got = dbscan(points, ClusterParams(eps=eps, min_pts=min_pts))
        want = reference_dbscan(points, eps, min_pts)
        assert list(got.labels) == want


def test_clustering_validates_labels():
    with pytest.raises(ValueError):
        Clustering(labels=(0, 2), num_clusters=2)


def test_cluster_params_validation():
    with pytest.raises(ValueError):
        ClusterParams(eps=0.0)
    with pytest.raises(ValueError):
        ClusterParams(min_pts=0)


# ------------------------------------------------- cluster selection


def test_larger_cluster_wins():
    points = [on_circle(a) for a in (0.0, 0.02, 0.04)] + [
        on_circle(a) for a in (2.0, 2.02)
    ]
    clustering = dbscan(points, ClusterParams(eps=0.1, min_pts=2))
    assert clustering.num_clusters == 2
    assert select_consensus_cluster(clustering, points) == (0, 1, 2)


def test_size_tie_broken_by_compactness():
    tight = [on_circle(0.0), on_circle(math.acos(0.95))]  # pairwise 0.05
    loose = [on_circle(2.0), on_circle(2.0 + math.acos(0.80))]  # pairwise 0.20
    points = tight + loose
    clustering = dbscan(points, ClusterParams(eps=0.3, min_pts=2))
    assert clustering.num_clusters == 2
    assert select_consensus_cluster(clustering, points) == (0, 1)
    # flip the order: the tighter pair still wins
    points = loose + tight
    clustering = dbscan(points, ClusterParams(eps=0.3, min_pts=2))
    assert select_consensus_cluster(clustering, points) == (2, 3)


def test_full_tie_broken_by_smallest_index():
    # two identical-shape singleton clusters
    points = [unit(1, 0, 0), unit(0, 1, 0)]
    clustering = dbscan(points, ClusterParams(eps=0.1, min_pts=1))
    assert select_consensus_cluster(clustering, points) == (0,)


def test_all_outliers_falls_back_to_everyone():
    points = [unit(1, 0, 0), unit(0, 1, 0), unit(-1, 0, 0)]
    clustering = dbscan(points, ClusterParams(eps=0.3, min_pts=2))
    assert select_consensus_cluster(clustering, points) == (0, 1, 2)


def test_average_pairwise_distance_singleton_is_zero():
    assert average_pairwise_distance([3], np.eye(4)) == 0.0


# ------------------------------------------- centroid and selection


def test_normalized_centroid_of_duplicates():
    points = [unit(0, 1, 0)] * 3
    assert np.allclose(normalized_centroid([0, 1, 2], points), unit(0, 1, 0))


def test_normalized_centroid_antipodal_raises():
    points = [unit(1, 0, 0), unit(-1, 0, 0)]
    with pytest.raises(ZeroSumError):
        normalized_centroid([0, 1], points)


def test_representative_distance_tie_prefers_shorter_bytes():
    centroid = np.array([1.0, 0.0, 0.0, 0.0])
    phi = 0.3
    points = [on_circle(phi), on_circle(-phi)]  # exactly equidistant
    texts = ["a response that is quite long indeed", "short one"]
    assert select_representative([0, 1], points, texts, centroid) == 1
    texts = ["same size", "samo size"]
    assert select_representative([0, 1], points, texts, centroid) == 0


def test_medoid_singleton():
    assert medoid([2], np.eye(3), ["x", "y", "z"]) == 2


# ---------------------------------------------- consensus_for_prompt


def test_identical_responses_select_client_zero():
    texts = ["the sky is blue today"] * 3
    recs = records(texts)
    embs = [encode_normalized(t, CFG) for t in texts]
    result = consensus_for_prompt(recs, embs, ClusterParams())
    assert result.consensus_members == (0, 1, 2)
    assert result.representative == 0
    assert result.pseudo_label == texts[0]
    assert not result.fallback_all_outliers


def test_majority_cluster_beats_minority():
    texts = [
        "the capital of france is paris, a large city",
        "the capital of france is paris, the city",
        "the capital of france is paris in europe",
        "bananas are yellow fruit",
        "quantum entanglement wobbles",
    ]
    recs = records(texts)
    embs = [encode_normalized(t, CFG) for t in texts]
    result = consensus_for_prompt(recs, embs, ClusterParams())
    assert result.consensus_members == (0, 1, 2)
    assert result.representative in (0, 1, 2)
    assert result.pseudo_label == texts[result.representative]
    oracle = reference_consensus([r.client for r in recs], texts, embs, 0.3, 2)
    assert result.pseudo_label == oracle["pseudo_label"]
    assert result.representative == oracle["representative"]


def test_single_client_is_its_own_consensus():
    texts = ["only voice"]
    recs = records(texts)
    embs = [encode_normalized(t, CFG) for t in texts]
    result = consensus_for_prompt(recs, embs, ClusterParams())
    # a single point with min_pts=2 is an outlier; fallback keeps it
    assert result.fallback_all_outliers
    assert result.consensus_members == (0,)
    assert result.pseudo_label == "only voice"


def test_antipodal_fallback_uses_medoid_and_shorter_text():
    points = [unit(1, 0, 0, 0), unit(-1, 0, 0, 0)]
    texts = ["the long-winded answer", "brief"]
    recs = records(texts)
    result = consensus_for_prompt(recs, points, ClusterParams(eps=0.3, min_pts=2))
    assert result.fallback_all_outliers
    assert result.consensus_members == (0, 1)
    # centroid sum cancels exactly; medoid scores tie at 2.0; byte
    # length picks the shorter response
    assert result.representative == 1
    assert result.pseudo_label == "brief"
    assert np.allclose(result.centroid, points[1])


def test_client_ids_are_reported_not_positions():
    texts = ["the sky is blue today"] * 2
    recs = records(texts, clients=[4, 9])
    embs = [encode_normalized(t, CFG) for t in texts]
    result = consensus_for_prompt(recs, embs, ClusterParams())
    assert result.consensus_members == (4, 9)
    assert result.representative == 4


def test_input_validation():
    texts = ["alpha bravo", "charlie delta"]
    embs = [encode_normalized(t, CFG) for t in texts]
    with pytest.raises(ValueError, match="at least one"):
        consensus_for_prompt([], [], ClusterParams())
    with pytest.raises(ValueError, match="embeddings"):
        consensus_for_prompt(records(texts), embs[:1], ClusterParams())
    with pytest.raises(ValueError, match="unit norm"):
        consensus_for_prompt(records(texts), [embs[0], embs[1] * 2.0], ClusterParams())
    with pytest.raises(ValueError, match="strictly increasing"):
        consensus_for_prompt(records(texts, clients=[1, 1]), embs, ClusterParams())
    mixed = records(texts[:1]) + records(texts[1:], prompt_id="p1", clients=[1])
    with pytest.raises(ValueError, match="multiple prompts"):
        consensus_for_prompt(mixed, embs, ClusterParams())


# ------------------------------------------------------- strategies


def test_global_medoid_matches_naive_scan():
    rng = np.random.default_rng(7)
    for _ in range(50):
        k = int(rng.integers(1, 7))
        texts = [f"response {i} " + "x" * int(rng.integers(0, 20)) for i in range(k)]
        embs = [v / np.linalg.norm(v) for v in rng.normal(size=(k, 6))]
        recs = records(texts)
        result = consensus_for_prompt(
            recs, embs, ClusterParams(), SelectionStrategy(rule=SelectionRule.GLOBAL_MEDOID)
        )
        want_rep, want_label = reference_global_medoid(list(range(k)), texts, embs)
        assert result.representative == want_rep
        assert result.pseudo_label == want_label
        assert result.consensus_members == tuple(range(k))


def test_random_in_cluster_is_deterministic_and_in_members():
    texts = [
        "the capital of france is paris, a large city",
        "the capital of france is paris, the city",
        "the capital of france is paris in europe",
        "bananas are yellow fruit",
    ]
    recs = records(texts)
    embs = [encode_normalized(t, CFG) for t in texts]
    strategy = SelectionStrategy(rule=SelectionRule.RANDOM_IN_CLUSTER, seed=11)
    first = consensus_for_prompt(recs, embs, ClusterParams(), strategy)
    second = consensus_for_prompt(recs, embs, ClusterParams(), strategy)
    assert first.representative == second.representative
    assert first.representative in first.consensus_members
    assert first.consensus_members == (0, 1, 2)
    # the draw depends on the prompt id, not on call order
    other_prompt = [make_response(r.client, "p9", r.text) for r in recs]
    reps = {
        consensus_for_prompt(
            other_prompt, embs, ClusterParams(), SelectionStrategy(SelectionRule.RANDOM_IN_CLUSTER, seed=s)
        ).representative
        for s in range(8)
    }
    assert reps <= {0, 1, 2}
    assert len(reps) > 1


# ------------------------------------------------------- properties


@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_of_clients_keeps_the_label(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 7))
    embs = [v / np.linalg.norm(v) for v in rng.normal(size=(k, 5))]
    texts = [f"text {i} " + "pad" * i for i in range(k)]
    params = ClusterParams(eps=float(rng.uniform(0.2, 0.9)), min_pts=2)
    base = consensus_for_prompt(records(texts), embs, params)
    perm = rng.permutation(k)
    permuted_texts = [texts[p] for p in perm]
    permuted_embs = [embs[p] for p in perm]
    permuted = consensus_for_prompt(records(permuted_texts), permuted_embs, params)
    # random unit vectors are tie-free with probability one, so the
    # selected text cannot depend on client order
    assert permuted.pseudo_label == base.pseudo_label


@given(exponent=st.integers(-6, 6))
def test_raw_embedding_scaling_leaves_result_unchanged(exponent):
    from semfed.encoder import encode, normalize

    texts = [
        "the capital of france is paris, a large city",
        "the capital of france is paris, the city",
        "bananas are yellow fruit",
    ]
    raw = [encode(t, CFG) for t in texts]
    scale = 2.0**exponent
    base = consensus_for_prompt(records(texts), [normalize(v) for v in raw], ClusterParams())
    scaled = consensus_for_prompt(
        records(texts), [normalize(v * scale) for v in raw], ClusterParams()
    )
    # powers of two rescale mantissas exactly, so everything matches
    # bit for bit
    assert scaled.pseudo_label == base.pseudo_label
    assert scaled.consensus_members == base.consensus_members
    assert scaled.representative == base.representative
    assert np.array_equal(scaled.centroid, base.centroid)
