import dataclasses
import json

import pytest

from core.strategies.ablation import (
    SUMMARY_FILE,
    ablation_rows,
    config_for_row,
    get_all_rows,
    get_row_flags,
    row_labels,
    run_ablation,
)
from core.trainer import METRICS_FILE, TrainConfig


def test_six_distinct_rows():
    rows = get_all_rows()
    assert len(rows) == 6
    combos = {tuple(sorted(ablation_rows[r].items())) for r in rows}
    assert len(combos) == 6
    assert set(row_labels) == set(rows)


def test_baseline_and_full():
    assert not any(get_row_flags("baseline").values())
    assert all(get_row_flags("full").values())


def test_lookup_is_case_insensitive():
    assert get_row_flags("PLABEL") == ablation_rows["plabel"]
    assert get_row_flags("nope") == {}


def test_config_for_row():
    cfg = config_for_row(TrainConfig(epochs=3), "imix")
    assert (cfg.enable_mix, cfg.enable_pseudo, cfg.enable_resize) == (True, False, False)
    assert cfg.epochs == 3


def test_config_for_unknown_row():
    with pytest.raises(KeyError):
        config_for_row(TrainConfig(), "everything")


def test_run_ablation_layout(tiny_splits, tiny_train_cfg, tmp_path):
    cfg = dataclasses.replace(tiny_train_cfg, epochs=1)
    summary = run_ablation(
        cfg,
        tiny_splits.source,
        None,
        tiny_splits.target_train,
        tiny_splits.target_val,
        tmp_path,
        seeds=(1, 2),
        rows=["baseline", "full"],
    )
    assert summary["seeds"] == [1, 2]
    assert list(summary["rows"]) == ["baseline", "full"]
    for row in ("baseline", "full"):
        entry = summary["rows"][row]
        assert len(entry["target_map"]) == 2
        assert entry["median_map"] == pytest.approx(sum(entry["target_map"]) / 2)
        for seed in (1, 2):
            assert (tmp_path / row / f"seed_{seed}" / METRICS_FILE).exists()

    baseline_metrics = (tmp_path / "baseline" / "seed_1" / METRICS_FILE).read_text(encoding="utf-8")
    full_metrics = (tmp_path / "full" / "seed_1" / METRICS_FILE).read_text(encoding="utf-8")
    assert baseline_metrics != full_metrics
    assert json.loads((tmp_path / SUMMARY_FILE).read_text(encoding="utf-8")) == summary
