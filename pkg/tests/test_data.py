import numpy as np
import pytest
from PIL import Image

from dermseg import data
from dermseg.errors import DataError


def write_rgb(path, arr):
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(path)


def write_gray(path, arr):
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


@pytest.fixture
def dataset_dirs(tmp_path):
    image_dir = tmp_path / "images"
    mask_dir = tmp_path / "masks"
    image_dir.mkdir()
    mask_dir.mkdir()
    rng = np.random.default_rng(0)
    for name in ("b_img", "a_img", "c_img"):
        write_rgb(image_dir / f"{name}.png",
                  rng.integers(0, 255, (12, 12, 3)))
        mask = np.zeros((12, 12), dtype=np.uint8)
        mask[3:8, 3:8] = 255
        write_gray(mask_dir / f"{name}_segmentation.png", mask)
    return image_dir, mask_dir


def test_load_dataset_sorted(dataset_dirs):
    samples = data.load_dataset(*dataset_dirs)
    assert [s.id for s in samples] == ["a_img", "b_img", "c_img"]
    assert samples[0].image.shape == (3, 12, 12)
    assert samples[0].original_size == (12, 12)


def test_load_dataset_missing_mask_names_id(dataset_dirs):
    image_dir, mask_dir = dataset_dirs
    (mask_dir / "b_img_segmentation.png").unlink()
    with pytest.raises(DataError, match="b_img"):
        data.load_dataset(image_dir, mask_dir)


def test_load_dataset_binarizes_mask(dataset_dirs):
    samples = data.load_dataset(*dataset_dirs)
    assert set(np.unique(samples[0].mask)).issubset({0, 1})
    assert samples[0].mask[5, 5] == 1
    assert samples[0].mask[0, 0] == 0


def test_load_dataset_dimension_mismatch(dataset_dirs):
    image_dir, mask_dir = dataset_dirs
    write_gray(mask_dir / "a_img_segmentation.png",
               np.zeros((5, 7), dtype=np.uint8))
    with pytest.raises(DataError, match="a_img"):
        data.load_dataset(image_dir, mask_dir)


def test_load_dataset_undecodable_file(dataset_dirs):
    image_dir, mask_dir = dataset_dirs
    (image_dir / "a_img.png").write_bytes(b"not a png at all")
    with pytest.raises(DataError, match="a_img"):
        data.load_dataset(image_dir, mask_dir)


def test_load_dataset_resizes(dataset_dirs):
    samples = data.load_dataset(*dataset_dirs, target_size=(8, 8))
    assert samples[0].image.shape == (3, 8, 8)
    assert samples[0].mask.shape == (8, 8)
    assert samples[0].original_size == (12, 12)
    assert set(np.unique(samples[0].mask)).issubset({0, 1})


# --- resizing ---------------------------------------------------------------


def test_bilinear_identity():
    rng = np.random.default_rng(1)
    img = rng.random((3, 6, 7)).astype(np.float32) * 255
    out = data.resize_bilinear(img, (6, 7))
    assert np.abs(out - img).max() < 1e-4


def test_bilinear_constant():
    img = np.full((3, 4, 4), 57.0, dtype=np.float32)
    out = data.resize_bilinear(img, (9, 13))
    assert np.abs(out - 57.0).max() < 1e-4


def test_bilinear_hand_case():
    # 2x2 [[0,100],[0,100]] to 2x4: center-aligned weights give 0,25,75,100
    img = np.array([[0.0, 100.0], [0.0, 100.0]], dtype=np.float32)
    out = data.resize_bilinear(img, (2, 4))
    assert np.allclose(out[0], [0.0, 25.0, 75.0, 100.0], atol=1e-4)
    assert np.allclose(out[1], [0.0, 25.0, 75.0, 100.0], atol=1e-4)


def test_nearest_keeps_binary():
    rng = np.random.default_rng(2)
    mask = (rng.random((10, 10)) < 0.4).astype(np.uint8)
    out = data.resize_nearest(mask, (17, 13))
    assert set(np.unique(out)).issubset({0, 1})
    assert data.resize_nearest(mask, (10, 10)).tolist() == mask.tolist()


# --- augmentation -----------------------------------------------------------


class FixedRng:
    """Deterministic stand-in for a Generator: yields scripted draws."""

    def __init__(self, draws):
        self.draws = list(draws)

    def integers(self, *_args, **_kw):
        return self.draws.pop(0)


def square_sample():
    rng = np.random.default_rng(3)
    img = rng.random((3, 8, 8)).astype(np.float32) * 255
    mask = (img[0] > 128).astype(np.uint8)
    return data.Sample(id="s", image=img, mask=mask, original_size=(8, 8))


def test_augment_identity_draw():
    s = square_sample()
    out = data.augment(s, FixedRng([0, 0]))
    assert np.array_equal(out.image, s.image)
    assert np.array_equal(out.mask, s.mask)


def test_four_quarter_turns_restore():
    s = square_sample()
    out = s
    for _ in range(4):
        out = data.augment(out, FixedRng([1, 0]))
    assert np.array_equal(out.image, s.image)
    assert np.array_equal(out.mask, s.mask)


def test_augment_preserves_pixel_count_and_correspondence():
    s = square_sample()
    rng = np.random.default_rng(4)
    for _ in range(16):
        out = data.augment(s, rng)
        assert out.mask.sum() == s.mask.sum()
        # mask stays aligned with the image content that defined it
        assert np.array_equal(out.mask, (out.image[0] > 128).astype(np.uint8))


def test_augment_rejects_non_square():
    img = np.zeros((3, 4, 6), dtype=np.float32)
    s = data.Sample(id="x", image=img, mask=np.zeros((4, 6), np.uint8),
                    original_size=(4, 6))
    with pytest.raises(DataError):
        data.augment(s, np.random.default_rng(0))


# --- standardization --------------------------------------------------------


def test_standardize_constant_is_zero():
    out = data.standardize(np.full((3, 5, 5), 99.0, dtype=np.float32))
    assert np.array_equal(out, np.zeros((3, 5, 5), dtype=np.float32))


def test_standardize_statistics():
    rng = np.random.default_rng(5)
    img = (rng.random((3, 16, 16)) * 255).astype(np.float32)
    out = data.standardize(img)
    assert abs(out.mean(dtype=np.float64)) < 1e-5
    assert abs(out.std(dtype=np.float64) - 1.0) < 1e-4


def test_standardize_two_value_image():
    img = np.zeros((3, 4, 4), dtype=np.float32)
    img[:, :, 2:] = 255.0  # half 0, half 255: mean 127.5, std 127.5
    out = data.standardize(img)
    assert np.allclose(np.unique(out), [-1.0, 1.0], atol=1e-6)


def test_standardize_affine_invariance():
    rng = np.random.default_rng(6)
    img = (rng.random((3, 8, 8)) * 200 + 10).astype(np.float32)
    a, b = 3.7, -42.0
    out0 = data.standardize(img)
    out1 = data.standardize(img * a + b)
    assert np.abs(out0 - out1).max() < 1e-4


# --- batching ---------------------------------------------------------------


def make_samples(n, size=8):
    rng = np.random.default_rng(7)
    out = []
    for i in range(n):
        img = (rng.random((3, size, size)) * 255).astype(np.float32)
        mask = (rng.random((size, size)) < 0.3).astype(np.uint8)
        out.append(data.Sample(id=f"s{i:03d}", image=img, mask=mask,
                               original_size=(size, size)))
    return out


def test_batch_sizes_70_by_32():
    samples = make_samples(70)
    sizes = [im.shape[0] for im, _ in
             data.batches(samples, 32, np.random.default_rng(0))]
    assert sizes == [32, 32, 6]


def test_batches_same_seed_identical():
    samples = make_samples(20)
    a = [(im.data.copy(), lab.copy()) for im, lab in
         data.batches(samples, 8, np.random.default_rng(11))]
    b = [(im.data.copy(), lab.copy()) for im, lab in
         data.batches(samples, 8, np.random.default_rng(11))]
    for (ia, la), (ib, lb) in zip(a, b):
        assert ia.tobytes() == ib.tobytes()
        assert np.array_equal(la, lb)


def test_batches_different_seeds_differ():
    samples = make_samples(100)
    def order(seed):
        rng = np.random.default_rng(seed)
        return list(rng.permutation(len(samples)))
    assert order(1) != order(2)


def test_every_sample_once_per_epoch():
    samples = make_samples(13)
    rng = np.random.default_rng(12)
    seen = 0
    for im, lab in data.batches(samples, 4, rng, augment_samples=False):
        seen += im.shape[0]
    assert seen == 13


def test_empty_dataset_raises():
    with pytest.raises(DataError):
        list(data.batches([], 4, np.random.default_rng(0)))
