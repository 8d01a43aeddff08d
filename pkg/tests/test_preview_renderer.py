import numpy as np
import pytest

from core.clipstore import Origin
from core.mixer import MixConfig, PseudoLabel, aim_mix
from tests.factories import make_clip, make_sample

pytest.importorskip("PySide6")

from core.ui.preview_renderer import ORIGIN_COLORS, render_key_frame, save_preview_png  # noqa: E402


@pytest.fixture
def mixed():
    source = make_sample([(2, 2, 10, 10)], [1], clip=make_clip(value=0), sample_id="src")
    target = make_sample(
        [(3, 3, 9, 9), (20, 20, 30, 30)], [0, 0], clip=make_clip(value=255), sample_id="tgt", origin=Origin.TARGET
    )
    pseudo = [PseudoLabel(2, 0.95), PseudoLabel(0, 0.5)]
    return aim_mix(source, target, pseudo, np.random.default_rng(0), MixConfig(expand_factor=0.0))


def test_render_scales_and_colours(mixed):
    image = render_key_frame(mixed, scale=2)
    assert (image.width(), image.height()) == (64, 64)
    # 保留的目标框上边缘附近
    colours = {
        (c.red(), c.green(), c.blue())
        for c in (image.pixelColor(x, y) for x in range(42, 58) for y in range(38, 43))
    }
    assert ORIGIN_COLORS[Origin.TARGET.value] in colours
    assert ORIGIN_COLORS["discarded"] not in colours


def test_save_png(mixed, tmp_path):
    path = tmp_path / "png" / f"{mixed.sample_id}.png"
    save_preview_png(mixed, path)
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
