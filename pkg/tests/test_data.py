import numpy as np
import pytest

from token_transformer.data import folder_dataset, load_image, resize_nearest, synth_dataset
from token_transformer.errors import ContractError, DataError
from token_transformer.pnm import decode_pnm, read_pnm, write_pnm


def test_synth_is_bitwise_deterministic():
    a, b = synth_dataset(60, 4, 16, seed=3), synth_dataset(60, 4, 16, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert synth_dataset(60, 4, 16, seed=4).images.tobytes() != a.images.tobytes()


def test_synth_labels_balanced():
    ds = synth_dataset(103, 10, 8)
    counts = np.bincount(ds.labels, minlength=10)
    assert counts.max() - counts.min() <= 1


def test_synth_class_means_separated():
    ds = synth_dataset(300, 3, 32)
    means = [ds.images[ds.labels == k].mean(axis=0) for k in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.linalg.norm(means[i] - means[j]) > 0.1


def test_synth_range_and_dtype():
    ds = synth_dataset(20, 2, 16)
    assert ds.images.dtype == np.float32 and ds.images.shape == (20, 3, 16, 16)
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_synth_rejects_bad_sizes():
    with pytest.raises(ContractError):
        synth_dataset(0, 3, 8)


def test_batches_cover_each_sample_once():
    ds = synth_dataset(10, 2, 8)
    seen = np.concatenate([lab for _, lab in ds.batches(3, np.random.default_rng(0))])
    assert sorted(seen.tolist()) == sorted(ds.labels.tolist())
    assert sum(1 for _ in ds.batches(3, np.random.default_rng(0), drop_last=True)) == 3


@pytest.mark.parametrize("channels,binary", [(1, True), (1, False), (3, True), (3, False)])
def test_pnm_round_trip(tmp_path, channels, binary):
    img = np.random.default_rng(0).integers(0, 256, (channels, 5, 7)).astype(np.uint8)
    path = tmp_path / "x.pnm"
    write_pnm(path, img, binary=binary)
    assert np.array_equal(np.rint(read_pnm(path) * 255).astype(np.uint8), img)


def test_pnm_header_comments_and_16bit():
    buf = b"P5\n# made by hand\n2 1 # width height\n65535\n" + np.array([0, 65535], ">u2").tobytes()
    assert decode_pnm(buf).tolist() == [[[0.0, 1.0]]]


def test_ascii_pnm():
    assert decode_pnm(b"P2 2 2 4\n0 1\n2 4\n")[0].tolist() == [[0.0, 0.25], [0.5, 1.0]]


@pytest.mark.parametrize("buf", [b"P5\n4 4\n255\n\x00\x01", b"XX\n1 1\n255\n\x00", b"P5\n4\n", b"P2 1 1 255\nzz\n",
                                 b"P5\n0 4\n255\n"])
def test_malformed_pnm_raises_data_error(buf):
    with pytest.raises(DataError):
        decode_pnm(buf)


def test_missing_image_is_data_error(tmp_path):
    with pytest.raises(DataError):
        read_pnm(tmp_path / "absent.ppm")


def test_load_image_grey_to_rgb_and_resize(tmp_path):
    grey = np.arange(16, dtype=np.uint8).reshape(4, 4) * 10
    write_pnm(tmp_path / "g.pgm", grey)
    img = load_image(tmp_path / "g.pgm", 8)
    assert img.shape == (3, 8, 8) and img.dtype == np.float32
    assert np.array_equal(img[0], img[2])
    assert img[0, 0, 0] == 0 and img[0, 7, 7] == pytest.approx(150 / 255)


def test_resize_nearest_identity():
    x = np.random.default_rng(0).random((3, 6, 6))
    assert np.array_equal(resize_nearest(x, 6), x)


def test_folder_dataset(tmp_path):
    rng = np.random.default_rng(0)
    for cls, n in (("cat", 2), ("ant", 3)):
        (tmp_path / cls).mkdir()
        for i in range(n):
            write_pnm(tmp_path / cls / f"{i}.ppm", rng.random((3, 4, 4)))
    (tmp_path / "ant" / "notes.txt").write_text("ignored")
    ds = folder_dataset(tmp_path, 8)
    assert ds.class_names == ("ant", "cat")
    assert ds.labels.tolist() == [0, 0, 0, 1, 1]
    assert ds.images.shape == (5, 3, 8, 8)


def test_folder_dataset_errors(tmp_path):
    with pytest.raises(DataError):
        folder_dataset(tmp_path / "nope", 8)
    with pytest.raises(DataError):
        folder_dataset(tmp_path, 8)
