"""Heatmap files, worker-count invariance, render rules."""

import os

import numpy as np
import pytest
from PIL import Image

from trinity_lite.dataprep import DatasetSpec, assemble_tile_image, build_dataset
from trinity_lite.errors import ValidationError
from trinity_lite.geo import BBox, TileKey, unproject
from trinity_lite.inference import (
    Heatmap,
    decode_heatmap,
    dominant_class_render,
    encode_heatmap,
    heatmap_path,
    predict_region,
    predict_tile,
    read_heatmap,
    render_heatmap_png,
)
from trinity_lite.kernel import Checkpoint, ModelSpec, build_model, forward, save_checkpoint
from trinity_lite.kernel.losses import softmax
from trinity_lite.labels import LabelManager, TaskSpec
from trinity_lite.store import ChannelStore, ProfileMeta, SparseTileRecord

X0, Y0 = 19000, 23000
TILES = [TileKey(X0 + dx, Y0 + dy) for dy in range(2) for dx in range(2)]


def lonlat_at(tile, fx, fy):
    lon, lat = unproject(tile.x * 256 + fx, tile.y * 256 + fy, 24)
    return lon, lat


def region_bbox(tiles=None):
    tiles = tiles or TILES
    w, n = lonlat_at(tiles[0], 1, 1)
    e, s = lonlat_at(tiles[-1], 255, 255)
    return BBox(w, s, e, n)


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("inf")
    store = ChannelStore(str(tmp_path / "store"))
    labels = LabelManager(str(tmp_path / "labels"))
    rng = np.random.default_rng(1)
    store.register_profile(ProfileMeta(
        profile_id="sig", name="Signals", description="",
        channel_names=["a", "b"],
        normalization=[{"mean": 0.2, "std": 0.5}] * 2))
    for tile in TILES:
        planes = rng.random((2, 256, 256)).astype(np.float32)
        store.put_tile("sig", SparseTileRecord.from_planes(tile, planes))

    lon, lat = lonlat_at(TILES[0], 100.5, 100.5)
    wkt = tmp_path / "a.wkt"
    wkt.write_text(f"POINT ({lon} {lat})\t1\n")
    labels.ingest_wkt_file(str(wkt), "ls", [TaskSpec("things", 2)], region_bbox())

    dspec = DatasetSpec(profile_ids=("sig",), label_set_id="ls",
                        val_fraction=0.3, split_seed=1)
    _, _, manifest = build_dataset(store, labels, dspec)

    mspec = ModelSpec("fcn_mini", 2, (("things", 2),))
    params = build_model(mspec, 3)
    ckpt_path = str(tmp_path / "model.trnk")
    save_checkpoint(Checkpoint(mspec, params), ckpt_path)
    return str(tmp_path / "store"), store, manifest, ckpt_path, mspec, params, tmp_path


class TestHeatmapFile:
    def _random_heatmap(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(3, 256, 256)).astype(np.float32)
        logits2 = rng.normal(size=(2, 256, 256)).astype(np.float32)
        return Heatmap(TileKey(5, 6), ["a", "b"],
                       [softmax(logits), softmax(logits2)])

    def test_round_trip(self):
        hm = self._random_heatmap()
        again = decode_heatmap(encode_heatmap(hm), ["a", "b"])
        assert (again.tile.x, again.tile.y) == (5, 6)
        assert again.task_names == ["a", "b"]
        for a, b in zip(hm.confidences, again.confidences):
            assert np.array_equal(a, b)

    def test_validate_accepts_softmax_output(self):
        self._random_heatmap().validate()

    def test_validate_rejects_unnormalized(self):
        hm = self._random_heatmap()
        hm.confidences[0] = hm.confidences[0] * 2
        with pytest.raises(ValidationError):
            hm.validate()

    def test_bad_magic(self):
        with pytest.raises(ValidationError):
            decode_heatmap(b"XXXX" + b"\x00" * 64)

    def test_trailing_bytes_rejected(self):
        data = encode_heatmap(self._random_heatmap())
        with pytest.raises(ValidationError):
            decode_heatmap(data + b"\x00")


class TestPredict:
    def test_single_tile_matches_manual_forward(self, setup):
        store_root, store, manifest, ckpt_path, mspec, params, _ = setup
        hm = predict_tile(store, manifest,
                          type("C", (), {"spec": mspec, "params": params}),
                          TILES[0])
        image = assemble_tile_image(store, manifest, TILES[0])
        want = softmax(forward(mspec, params, image)["things"])
        assert np.array_equal(hm.confidences[0], want)
        hm.validate()

    def test_unstored_tile_equals_zero_image(self, setup):
        store_root, store, manifest, ckpt_path, mspec, params, _ = setup
        empty = TileKey(100, 100)
        hm = predict_tile(store, manifest,
                          type("C", (), {"spec": mspec, "params": params}), empty)
        zero = np.zeros((2, 256, 256), dtype=np.float32)
        norm = np.stack([(zero[i] - 0.2) / 0.5 for i in range(2)]).astype(np.float32)
        want = softmax(forward(mspec, params, norm)["things"])
        assert np.array_equal(hm.confidences[0], want)

    def test_worker_counts_byte_identical(self, setup):
        store_root, store, manifest, ckpt_path, _, _, tmp_path = setup
        region = region_bbox()
        outs = {}
        for workers in (1, 2):
            out = str(tmp_path / f"pred_w{workers}")
            predict_region(store_root, manifest, ckpt_path, region, out,
                           workers=workers)
            blobs = {}
            for t in TILES:
                with open(heatmap_path(out, t), "rb") as f:
                    blobs[(t.x, t.y)] = f.read()
            outs[workers] = blobs
        assert outs[1] == outs[2]

    def test_all_tiles_match_independent_runs(self, setup):
        store_root, store, manifest, ckpt_path, mspec, params, tmp_path = setup
        out = str(tmp_path / "pred_all")
        paths = predict_region(store_root, manifest, ckpt_path, region_bbox(), out,
                               workers=2)
        assert len(paths) == 4
        for t in TILES:
            got = read_heatmap(heatmap_path(out, t), ["things"])
            solo = predict_tile(store, manifest,
                                type("C", (), {"spec": mspec, "params": params}), t)
            assert np.array_equal(got.confidences[0], solo.confidences[0])

    def test_channel_mismatch_fails_before_work(self, setup):
        store_root, _, manifest, _, _, _, tmp_path = setup
        bad_spec = ModelSpec("fcn_mini", 5, (("things", 2),))
        bad_path = str(tmp_path / "bad.trnk")
        save_checkpoint(Checkpoint(bad_spec, build_model(bad_spec, 0)), bad_path)
        out = str(tmp_path / "pred_bad")
        with pytest.raises(ValidationError):
            predict_region(store_root, manifest, bad_path, region_bbox(), out)
        assert not os.path.exists(heatmap_path(out, TILES[0]))

    def test_midrun_failure_removes_partials(self, setup):
        store_root, _, manifest, _, _, _, tmp_path = setup
        # checkpoint agrees with a tampered manifest, so the mismatch only
        # surfaces inside the workers, after some tiles may have written
        wrong = dict(manifest)
        wrong["C"] = manifest["C"] + 1
        spec = ModelSpec("fcn_mini", wrong["C"], (("things", 2),))
        path = str(tmp_path / "wrongc.trnk")
        save_checkpoint(Checkpoint(spec, build_model(spec, 0)), path)
        out = str(tmp_path / "pred_fail")
        with pytest.raises(ValidationError):
            predict_region(store_root, wrong, path, region_bbox(), out, workers=2)
        leftovers = [p for p in os.listdir(out)] if os.path.exists(out) else []
        assert not [p for p in leftovers if p.endswith(".trhm")]


class TestRender:
    def _flat_heatmap(self, p1):
        conf = np.empty((2, 256, 256), dtype=np.float32)
        conf[1] = p1
        conf[0] = 1.0 - p1
        return Heatmap(TileKey(0, 0), ["t"], [conf])

    def test_extremes_and_half(self, tmp_path):
        for value, expected in ((0.0, 0), (1.0, 255), (0.5, 128)):
            path = str(tmp_path / f"g_{expected}.png")
            render_heatmap_png(self._flat_heatmap(value), "t", 1, path)
            img = np.asarray(Image.open(path))
            assert img.shape == (256, 256)
            assert (img == expected).all()

    def test_bad_class_index(self, tmp_path):
        with pytest.raises(ValidationError):
            render_heatmap_png(self._flat_heatmap(0.5), "t", 2,
                               str(tmp_path / "x.png"))

    def test_dominant_tie_goes_to_class_zero(self, tmp_path):
        path = str(tmp_path / "dom.png")
        palette = [(0, 0, 0), (255, 0, 0)]
        dominant_class_render(self._flat_heatmap(0.5), "t", palette, path)
        img = np.asarray(Image.open(path))
        assert (img == 0).all()

    def test_dominant_matches_argmax_oracle(self, tmp_path):
        rng = np.random.default_rng(2)
        raw = rng.random((3, 256, 256)).astype(np.float32)
        conf = raw / raw.sum(axis=0, keepdims=True)
        hm = Heatmap(TileKey(0, 0), ["t"], [conf])
        palette = [(1, 2, 3), (4, 5, 6), (7, 8, 9)]
        path = str(tmp_path / "dom3.png")
        dominant_class_render(hm, "t", palette, path)
        img = np.asarray(Image.open(path))
        for y in range(0, 256, 37):
            for x in range(0, 256, 41):
                best = 0
                for c in range(1, 3):
                    if conf[c, y, x] > conf[best, y, x]:
                        best = c
                assert tuple(img[y, x]) == palette[best]

    def test_palette_size_checked(self, tmp_path):
        with pytest.raises(ValidationError):
            dominant_class_render(self._flat_heatmap(0.5), "t", [(0, 0, 0)],
                                  str(tmp_path / "p.png"))
