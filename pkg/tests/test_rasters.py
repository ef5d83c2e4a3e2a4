import os

import numpy as np
import pytest

from mcof.errors import (
    EmptyDataset,
    FormatError,
    IoError,
    MissingFileError,
    ParseError,
)
from mcof.rasters import (
    IGNORE,
    ImageRaster,
    LabelRaster,
    ScalarRaster,
    load_manifest,
    load_png,
    load_scalar_raster,
    read_f32r,
    save_png,
    voc_palette,
    write_f32r,
)


def test_image_raster_rejects_bad_shape_and_dtype():
    with pytest.raises(FormatError):
        ImageRaster(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(FormatError):
        ImageRaster(np.zeros((4, 4, 3), dtype=np.float32))
    with pytest.raises(FormatError):
        ImageRaster(np.zeros((0, 4, 3), dtype=np.uint8))


def test_label_raster_class_range_check():
    lab = LabelRaster(np.array([[0, 4], [IGNORE, 2]], dtype=np.uint8))
    lab.check_class_range(5)
    with pytest.raises(FormatError):
        lab.check_class_range(4)


def test_scalar_raster_rejects_nonfinite():
    with pytest.raises(FormatError):
        ScalarRaster(np.array([[np.nan]], dtype=np.float32))


def test_rasters_are_immutable():
    img = ImageRaster(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1


def test_png_rgb_round_trip_all_red(tmp_path):
    path = str(tmp_path / "red.png")
    data = np.zeros((2, 2, 3), dtype=np.uint8)
    data[:, :] = (255, 0, 0)
    save_png(ImageRaster(data), path)
    loaded = load_png(path)
    assert isinstance(loaded, ImageRaster)
    assert loaded.height == 2 and loaded.width == 2
    assert (loaded.data == (255, 0, 0)).all()


def test_png_label_round_trip_preserves_indices(tmp_path):
    path = str(tmp_path / "labels.png")
    data = np.array([[0, 1], [20, IGNORE]], dtype=np.uint8)
    save_png(LabelRaster(data), path)
    loaded = load_png(path)
    assert isinstance(loaded, LabelRaster)
    assert (loaded.data == data).all()


def test_load_png_missing_and_garbage(tmp_path):
    with pytest.raises(IoError):
        load_png(str(tmp_path / "nope.png"))
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"this is not a png")
    with pytest.raises(FormatError):
        load_png(str(bad))


def test_voc_palette_known_entries():
    pal = voc_palette()
    assert tuple(pal[0]) == (0, 0, 0)
    assert tuple(pal[1]) == (128, 0, 0)
    assert tuple(pal[2]) == (0, 128, 0)
    assert tuple(pal[IGNORE]) == (224, 224, 192)


def test_f32r_round_trip_2d_and_3d(tmp_path, rng):
    p2 = str(tmp_path / "a.f32r")
    a = rng.random((5, 7)).astype(np.float32)
    write_f32r(p2, a)
    assert (read_f32r(p2) == a).all()

    p3 = str(tmp_path / "b.f32r")
    b = rng.random((4, 3, 2)).astype(np.float32)
    write_f32r(p3, b)
    assert (read_f32r(p3) == b).all()


def test_f32r_header_layout(tmp_path):
    path = str(tmp_path / "c.f32r")
    write_f32r(path, np.zeros((2, 3), dtype=np.float32))
    raw = open(path, "rb").read()
    assert raw[:4] == b"F32R"
    assert int.from_bytes(raw[4:8], "little") == 3  # width
    assert int.from_bytes(raw[8:12], "little") == 2  # height
    assert int.from_bytes(raw[12:16], "little") == 1  # channels
    assert len(raw) == 16 + 4 * 6


def test_f32r_rejects_truncation_and_bad_magic(tmp_path):
    path = str(tmp_path / "d.f32r")
    write_f32r(path, np.zeros((2, 2), dtype=np.float32))
    raw = open(path, "rb").read()

    trunc = tmp_path / "trunc.f32r"
    trunc.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_f32r(str(trunc))

    bad = tmp_path / "magic.f32r"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_f32r(str(bad))

    with pytest.raises(IoError):
        read_f32r(str(tmp_path / "missing.f32r"))


def test_load_scalar_raster_from_gray_png_scales(tmp_path):
    path = str(tmp_path / "gray.png")
    save_png(LabelRaster(np.array([[0, 255]], dtype=np.uint8)), path)
    s = load_scalar_raster(path)
    assert s.data[0, 0] == 0.0
    assert s.data[0, 1] == 1.0


def test_load_scalar_raster_clips_probabilities(tmp_path):
    path = str(tmp_path / "p.f32r")
    write_f32r(path, np.array([[-0.5, 1.5]], dtype=np.float32))
    s = load_scalar_raster(path, probability=True)
    assert s.data[0, 0] == 0.0 and s.data[0, 1] == 1.0
    raw = load_scalar_raster(path, probability=False)
    assert raw.data[0, 0] == -0.5


def _write_entry_files(root, stem, with_sal=True, with_gt=True):
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    save_png(ImageRaster(img), str(root / f"{stem}.png"))
    write_f32r(str(root / f"{stem}_h.f32r"), np.zeros((4, 4), dtype=np.float32))
    if with_sal:
        write_f32r(str(root / f"{stem}_s.f32r"), np.zeros((4, 4), dtype=np.float32))
    if with_gt:
        save_png(LabelRaster(np.zeros((4, 4), dtype=np.uint8)),
                 str(root / f"{stem}_gt.png"))


def test_manifest_parses_and_resolves_relative_paths(tmp_path):
    _write_entry_files(tmp_path, "a")
    man_path = tmp_path / "manifest.txt"
    man_path.write_text(
        "# a comment\n"
        "\n"
        "a.png|2|a_h.f32r|a_s.f32r|a_gt.png\n"
    )
    man = load_manifest(str(man_path), class_count=5)
    assert len(man) == 1
    e = man.entries[0]
    assert e.labels == (2,)
    assert e.stem == "a"
    assert os.path.isabs(e.image_path) and os.path.exists(e.image_path)
    assert os.path.exists(e.heatmap_paths[2])
    assert os.path.exists(e.saliency_path)
    assert os.path.exists(e.gt_path)


def test_manifest_dash_means_absent(tmp_path):
    _write_entry_files(tmp_path, "a", with_sal=False, with_gt=False)
    man_path = tmp_path / "m.txt"
    man_path.write_text("a.png|1|a_h.f32r|-|-\n")
    man = load_manifest(str(man_path), class_count=5)
    assert man.entries[0].saliency_path is None
    assert man.entries[0].gt_path is None


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("a.png|1|a_h.f32r|-", "5 fields"),
        ("a.png||a_h.f32r|-|-", "label"),
        ("a.png|x|a_h.f32r|-|-", "class id"),
        ("a.png|0|a_h.f32r|-|-", "outside"),
        ("a.png|9|a_h.f32r|-|-", "outside"),
        ("a.png|1,1|a_h.f32r,a_h.f32r|-|-", "duplicate"),
        ("a.png|1,2|a_h.f32r|-|-", "heatmap"),
    ],
)
def test_manifest_parse_errors_carry_line_numbers(tmp_path, line, fragment):
    _write_entry_files(tmp_path, "a")
    man_path = tmp_path / "m.txt"
    man_path.write_text("# header\n" + line + "\n")
    with pytest.raises(ParseError) as exc:
        load_manifest(str(man_path), class_count=5)
    assert exc.value.line_no == 2
    assert fragment in str(exc.value)


def test_manifest_collects_every_missing_file(tmp_path):
    _write_entry_files(tmp_path, "a")
    man_path = tmp_path / "m.txt"
    man_path.write_text(
        "a.png|1|a_h.f32r|-|-\n"
        "gone.png|1|gone_h.f32r|gone_s.f32r|-\n"
    )
    with pytest.raises(MissingFileError) as exc:
        load_manifest(str(man_path), class_count=5)
    missing = [os.path.basename(p) for p in exc.value.missing]
    assert missing == ["gone.png", "gone_h.f32r", "gone_s.f32r"]


def test_manifest_empty_is_an_error(tmp_path):
    man_path = tmp_path / "m.txt"
    man_path.write_text("# nothing here\n")
    with pytest.raises(EmptyDataset):
        load_manifest(str(man_path))
