import numpy as np
import pytest

from scnn.datasets import BoundingBox
from scnn.proposals import (ProposalSet, Region, hierarchical_group, init_regions,
                            merge, read_proposal_cache, selective_search, similarity,
                            write_proposal_cache)
from scnn.segmentation import SegParams, SegmentationResult, felzenszwalb_segment


def make_region(rng, rid, h=40, w=40):
    color = rng.random(75)
    texture = rng.random(240)
    top, left = rng.integers(0, h - 5), rng.integers(0, w - 5)
    return Region(id=rid, size=int(rng.integers(1, 50)),
                  box=BoundingBox(int(top), int(left),
                                  int(rng.integers(top, h)), int(rng.integers(left, w))),
                  color_hist=color / color.sum(), texture_hist=texture / texture.sum())


def brute_force_group(regions, image_area):
    """Recompute every neighboring pair's similarity from scratch each step.

    Independent of the heap implementation: plain dict scan with the same
    tie rule (smallest id pair).
    """
    alive = {r.id: Region(r.id, r.size, r.box, r.color_hist.copy(),
                          r.texture_hist.copy(), set(r.neighbors)) for r in regions}
    boxes = [r.box for r in regions]
    next_id = len(regions)
    while len(alive) > 1:
        best = None
        for i in sorted(alive):
            for j in sorted(alive[i].neighbors):
                if i < j:
                    s = similarity(alive[i], alive[j], image_area)
                    if best is None or s > best[0] or (s == best[0] and (i, j) < best[1:]):
                        best = (s, i, j)
        _, i, j = best
        merged = merge(alive[i], alive[j], next_id)
        del alive[i], alive[j]
        for nb in merged.neighbors:
            alive[nb].neighbors -= {i, j}
            alive[nb].neighbors.add(next_id)
        alive[next_id] = merged
        boxes.append(merged.box)
        next_id += 1
    return boxes


def quadrant_segmentation(side=8):
    labels = np.zeros((side, side), dtype=np.int32)
    half = side // 2
    labels[:half, half:] = 1
    labels[half:, :half] = 2
    labels[half:, half:] = 3
    return SegmentationResult(labels=labels, region_count=4)


def test_init_regions_single_segment():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (6, 9, 3), dtype=np.uint8)
    seg = SegmentationResult(labels=np.zeros((6, 9), np.int32), region_count=1)
    regions = init_regions(seg, img)
    assert len(regions) == 1
    r = regions[0]
    assert r.neighbors == set()
    assert r.box == BoundingBox(0, 0, 5, 8)
    assert r.size == 54
    assert r.color_hist.sum() == pytest.approx(1.0, abs=1e-6)
    assert r.texture_hist.sum() == pytest.approx(1.0, abs=1e-6)
    assert len(r.color_hist) == 75 and len(r.texture_hist) == 240


def test_init_regions_two_halves_neighbors():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    labels = np.zeros((8, 8), np.int32)
    labels[:, 4:] = 1
    regions = init_regions(SegmentationResult(labels, 2), img)
    assert regions[0].neighbors == {1}
    assert regions[1].neighbors == {0}


def test_init_regions_quadrants_have_diagonal_adjacency():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    regions = init_regions(quadrant_segmentation(), img)
    # brute-force enumeration of 8-connected cross-region pixel pairs
    expected = {0: {1, 2, 3}, 1: {0, 2, 3}, 2: {0, 1, 3}, 3: {0, 1, 2}}
    assert {r.id: r.neighbors for r in regions} == expected


def test_init_regions_neighbors_match_bruteforce():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)
    seg = felzenszwalb_segment(img, SegParams(0.0, 20, 1))
    regions = init_regions(seg, img)
    expected = {r.id: set() for r in regions}
    h, w = seg.labels.shape
    for r in range(h):
        for c in range(w):
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w:
                        a, b = int(seg.labels[r, c]), int(seg.labels[rr, cc])
                        if a != b:
                            expected[a].add(b)
    assert {r.id: r.neighbors for r in regions} == expected


def test_similarity_components():
    rng = np.random.default_rng(4)
    a = make_region(rng, 0)
    b = make_region(rng, 1)
    # identical histograms: color and texture terms are exactly 1
    b.color_hist = a.color_hist.copy()
    b.texture_hist = a.texture_hist.copy()
    a.size, b.size = 10, 20
    a.box, b.box = BoundingBox(0, 0, 4, 9), BoundingBox(5, 0, 9, 9)
    s = similarity(a, b, image_area=100)
    s_size = 1 - 30 / 100
    s_fill = 1 - (100 - 30) / 100
    assert s == pytest.approx(1 + 1 + s_size + s_fill, abs=1e-12)

    # disjoint-support color histograms -> s_color = 0
    b.color_hist = np.zeros(75)
    b.color_hist[np.argmin(a.color_hist)] = 1.0
    a2 = a.color_hist.copy()
    a2[np.argmin(a.color_hist)] = 0.0
    a.color_hist = a2 / a2.sum()
    assert float(np.minimum(a.color_hist, b.color_hist).sum()) == 0.0


def test_similarity_tiling_regions():
    rng = np.random.default_rng(5)
    a, b = make_region(rng, 0), make_region(rng, 1)
    a.size, b.size = 50, 50
    a.box, b.box = BoundingBox(0, 0, 9, 4), BoundingBox(0, 5, 9, 9)
    s_color = float(np.minimum(a.color_hist, b.color_hist).sum())
    s_texture = float(np.minimum(a.texture_hist, b.texture_hist).sum())
    assert similarity(a, b, 100) == pytest.approx(s_color + s_texture + 0.0 + 1.0, abs=1e-12)


def test_merge_bookkeeping():
    rng = np.random.default_rng(6)
    a, b = make_region(rng, 0), make_region(rng, 1)
    a.size = b.size = 25
    a.neighbors, b.neighbors = {1, 2, 3}, {0, 3, 4}
    m = merge(a, b, 7)
    assert m.size == 50
    assert np.allclose(m.color_hist, (a.color_hist + b.color_hist) / 2)
    assert m.color_hist.sum() == pytest.approx(1.0, abs=1e-6)
    assert m.texture_hist.sum() == pytest.approx(1.0, abs=1e-6)
    assert m.neighbors == {2, 3, 4}
    assert m.box == BoundingBox(min(a.box.top, b.box.top), min(a.box.left, b.box.left),
                                max(a.box.bottom, b.box.bottom), max(a.box.right, b.box.right))


def test_merged_size_matches_label_map_recount():
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, (10, 10, 3), dtype=np.uint8)
    seg = felzenszwalb_segment(img, SegParams(0.0, 30, 1))
    regions = init_regions(seg, img)
    if len(regions) >= 2 and 1 in regions[0].neighbors:
        m = merge(regions[0], regions[1], len(regions))
        counted = int(np.sum(seg.labels == 0) + np.sum(seg.labels == 1))
        assert m.size == counted


def test_group_single_region():
    rng = np.random.default_rng(8)
    img = rng.integers(0, 256, (5, 5, 3), dtype=np.uint8)
    regions = init_regions(SegmentationResult(np.zeros((5, 5), np.int32), 1), img)
    boxes = hierarchical_group(regions, 25)
    assert boxes == [BoundingBox(0, 0, 4, 4)]


def test_group_quadrants():
    rng = np.random.default_rng(9)
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    regions = init_regions(quadrant_segmentation(), img)
    boxes = hierarchical_group(regions, 64)
    assert len(boxes) == 7  # 2n-1
    assert boxes[-1] == BoundingBox(0, 0, 7, 7)


@pytest.mark.parametrize("seed", range(12))
def test_group_matches_bruteforce_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    regions = [make_region(rng, i) for i in range(n)]
    # random connected neighbor graph: a path plus extra edges
    order = rng.permutation(n)
    edges = {(min(a, b), max(a, b)) for a, b in zip(order, order[1:])}
    for _ in range(n):
        a, b = rng.integers(0, n, 2)
        if a != b:
            edges.add((min(a, b), max(a, b)))
    for a, b in edges:
        regions[a].neighbors.add(int(b))
        regions[b].neighbors.add(int(a))

    def clone(rs):
        return [Region(r.id, r.size, r.box, r.color_hist.copy(),
                       r.texture_hist.copy(), set(r.neighbors)) for r in rs]

    got = hierarchical_group(clone(regions), 1600)
    expected = brute_force_group(clone(regions), 1600)
    assert got == expected
    assert len(got) == 2 * n - 1


def test_selective_search_constant_image():
    img = np.full((20, 20, 3), 9, np.uint8)
    ps = selective_search(img, SegParams(0.0, 10, 1), min_box_side=1)
    assert ps.boxes == [BoundingBox(0, 0, 19, 19)]


def test_selective_search_min_side_filters_everything():
    rng = np.random.default_rng(10)
    img = rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)
    ps = selective_search(img, SegParams(0.0, 50, 1), min_box_side=13)
    assert ps.boxes == []


def test_selective_search_dedup_and_bounds():
    rng = np.random.default_rng(11)
    img = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
    ps = selective_search(img, SegParams(0.8, 30, 4), min_box_side=3)
    keys = [(b.top, b.left, b.bottom, b.right) for b in ps.boxes]
    assert len(keys) == len(set(keys))
    for b in ps.boxes:
        assert 0 <= b.top <= b.bottom < 24
        assert 0 <= b.left <= b.right < 24
    assert BoundingBox(0, 0, 23, 23) in ps.boxes  # full-image box survives the filter


def test_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    sets = []
    for i in range(5):
        boxes = [BoundingBox(*sorted(rng.integers(0, 50, 2).tolist()),
                             *[0, 0]) for _ in range(int(rng.integers(0, 6)))]
        boxes = [BoundingBox(b.top, 2, b.bottom, 7) for b in boxes]
        sets.append(ProposalSet(image_index=i, boxes=boxes))
    path = tmp_path / "cache.bin"
    write_proposal_cache(path, sets)
    again = read_proposal_cache(path)
    assert again == sets
    path2 = tmp_path / "cache2.bin"
    write_proposal_cache(path2, again)
    assert path.read_bytes() == path2.read_bytes()


def test_cache_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC")
    with pytest.raises(ValueError, match="magic"):
        read_proposal_cache(bad)
    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(b"SCNNPRP1" + b"\x00\x00\x00\x00\x05\x00\x00\x00" + b"\x00" * 8)
    with pytest.raises(ValueError, match="truncated"):
        read_proposal_cache(trunc)
