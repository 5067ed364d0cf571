import numpy as np
import pytest

from gatwsge.datasets import FrameStore, ModalityView, SampleRecord, expand, load_batch


def _clip(n, fps=8.0, rid="c"):
    g = np.tile([0.0, 0.0, -1.0], (n, 1))
    return SampleRecord(rid, "d", frames=[f"{k}.png" for k in range(n)], gaze3d=g, fps=fps)


def test_modalities():
    assert ModalityView.BOTH.modalities == ("image", "video")
    assert ModalityView("i") is ModalityView.IMAGE


def test_image_view_enumerates_frames():
    items = expand([_clip(5)], "image")
    assert [it.frame_idx for it in items] == [(k,) for k in range(5)]


def test_video_view_windows_and_tail():
    items = expand([_clip(20)], "video")
    assert [it.frame_idx for it in items] == [tuple(range(8)), tuple(range(8, 16)),
                                              (16, 17, 18, 19, 19, 19, 19, 19)]
    assert expand([_clip(1)], "video") == []


def test_video_view_resamples_fps():
    items = expand([_clip(30, fps=30.0)], "video")
    assert items[0].frame_idx == (0, 4, 8, 11, 15, 19, 23, 26)
    assert items[0].label().shape == (8, 3)
    with pytest.raises(ValueError):
        expand([_clip(3)], "audio")


def test_skip_degenerate():
    rec = SampleRecord("p", "d", frames=["a.png"], pseudo3d=np.array([[0, 0, -1.0]]), degenerate=True)
    assert len(expand([rec], "image")) == 1
    assert expand([rec], "image", skip_degenerate=True) == []


def test_batch_order_independent_of_workers(synth_dir):
    items = expand(synth_dir["clips"], "video") + expand(synth_dir["images"], "image")[:4]
    vid = items[:4]
    a, ya = load_batch(vid, FrameStore(1), np.random.default_rng(0), -0.1, 32)
    store = FrameStore(4)
    store.prefetch(vid)
    b, yb = load_batch(vid, store, np.random.default_rng(0), -0.1, 32)
    assert np.array_equal(a, b) and np.array_equal(ya, yb)
    assert a.shape == (4, 8, 32, 32, 3) and a.dtype == np.float32
    assert 0.0 <= a.min() and a.max() <= 1.0
