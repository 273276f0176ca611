import numpy as np
import pytest

from gmabench.errors import DimensionMismatch, FrameCountMismatch
from gmabench.frameio import (
    read_frames_dir,
    read_raw_stream,
    write_frames_dir,
    write_raw_stream,
)


@pytest.fixture()
def frames(rng):
    return [rng.integers(0, 256, size=(24, 32, 3), dtype=np.uint8) for _ in range(5)]


META = {"snippet_id": "io-test", "fps": 50, "width": 32, "height": 24}


class TestPngDir:
    def test_round_trip_is_lossless(self, tmp_path, frames):
        write_frames_dir(frames, tmp_path / "png", META)
        loaded, meta = read_frames_dir(tmp_path / "png")
        assert meta["snippet_id"] == "io-test"
        assert len(loaded) == 5
        for a, b in zip(frames, loaded):
            assert np.array_equal(a, b)

    def test_empty_dir_raises(self, tmp_path):
        (tmp_path / "png").mkdir()
        (tmp_path / "png" / "snippet.json").write_text("{}")
        with pytest.raises(FrameCountMismatch):
            read_frames_dir(tmp_path / "png")

    def test_frames_are_ordered_by_name(self, tmp_path, frames):
        write_frames_dir(frames, tmp_path / "png", META)
        loaded, _ = read_frames_dir(tmp_path / "png")
        assert np.array_equal(loaded[0], frames[0])
        assert np.array_equal(loaded[4], frames[4])


class TestRawStream:
    def test_round_trip_is_lossless(self, tmp_path, frames):
        path = tmp_path / "frames.rgb"
        write_raw_stream(frames, path, META)
        loaded, meta = read_raw_stream(path)
        assert meta["width"] == 32
        for a, b in zip(frames, loaded):
            assert np.array_equal(a, b)

    def test_truncated_stream_raises(self, tmp_path, frames):
        path = tmp_path / "frames.rgb"
        write_raw_stream(frames, path, META)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(DimensionMismatch):
            read_raw_stream(path)
