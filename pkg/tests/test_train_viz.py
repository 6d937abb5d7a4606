import json

import numpy as np
import pytest

from sspl.ablate import AXES, AblationRow, axis_config, format_table
from sspl.config import load_config
from sspl.errors import ConfigurationError
from sspl.synthdata import GeneratorConfig, generate
from sspl.train import build_model, evaluate, model_from_checkpoint, split_indices, train
from sspl.viz import read_ppm, visualize

TINY = [
    "visual_channels=4,8,8",
    "audio_channels=4",
    "audio_dim=4",
    "hidden=8",
    "embed_dim=8",
    "pred_hidden=4",
    "pcm_channels=8,8,4",
    "pcm_T=5",
    "batch_size=4",
]


@pytest.fixture(scope="module")
def eight():
    return generate(GeneratorConfig(seed=3), 8)


def tiny_cfg(*extra):
    return load_config(None, TINY + list(extra))


def test_one_epoch_eight_samples_two_steps(eight):
    result = train(tiny_cfg("epochs=1"), eight)
    assert [e["steps"] for e in result.log] == [2]


def test_same_seed_same_trajectory(eight, tmp_path):
    logs = []
    for run in ("a", "b"):
        path = tmp_path / f"{run}.jsonl"
        train(tiny_cfg("epochs=2"), eight, log_path=path)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]
    assert [json.loads(line)["epoch"] for line in logs[0].splitlines()] == [1, 2]


def test_different_seed_changes_trajectory(eight):
    a = train(tiny_cfg("epochs=1"), eight).log[0]["loss"]
    b = train(tiny_cfg("epochs=1", "seed=1"), eight).log[0]["loss"]
    assert a != b


def test_early_stopping_never_exceeds_epochs(eight):
    data = generate(GeneratorConfig(seed=3), 20)
    result = train(tiny_cfg("epochs=4", "patience=1"), data)
    assert result.epochs_run <= 4 and len(result.log) == result.epochs_run
    assert all("val_success" in e for e in result.log)


def test_split_is_every_tenth():
    tr, val = split_indices(25)
    assert list(val) == [9, 19] and len(tr) == 23


def test_checkpoint_reproduces_evaluation(eight, tmp_path):
    path = tmp_path / "m.ckpt"
    result = train(tiny_cfg("epochs=1"), eight, checkpoint_path=path)
    loaded, cfg = model_from_checkpoint(path)
    a = evaluate(result.model, eight)
    b = evaluate(loaded, eight)
    assert a == b and evaluate(loaded, eight) == b
    assert cfg.visual_channels == (4, 8, 8)


def test_evaluate_rejects_mismatched_dims(eight):
    model = build_model(tiny_cfg("use_pcm=false"), image_size=32, spec_shape=(32, 32))
    with pytest.raises(ConfigurationError):
        evaluate(model, eight)


def test_pcm_override_changes_cycles(eight):
    model = build_model(tiny_cfg())
    m1 = model.localization_map(eight.images[:2], eight.spectrograms[:2], cycles=1)
    m5 = model.localization_map(eight.images[:2], eight.spectrograms[:2], cycles=5)
    assert not np.array_equal(m1, m5)


def test_contrastive_objectives_train(eight):
    for objective in ("infonce", "infonce_masked"):
        result = train(tiny_cfg("epochs=1", f"objective={objective}"), eight)
        assert result.log[0]["steps"] == 2 and "skipped_anchors" in result.log[0]


def test_ablation_axes():
    assert AXES["stop_gradient"] == ("on", "off")
    assert set(AXES["scaling"]) == {"relu", "sigmoid", "softmax", "relu_softmax", "minmax"}
    assert tuple(AXES["pcm_T"]) == (1, 3, 5, 6, 7, 8)
    assert len(AXES["negatives"]) == 2


def test_axis_config_sets_one_switch():
    base = tiny_cfg()
    assert axis_config(base, "stop_gradient", "off").use_stop_gradient is False
    assert axis_config(base, "stop_gradient", "on").use_stop_gradient is True
    assert axis_config(base, "scaling", "relu").scaling_method == "relu"
    assert axis_config(base, "negatives", "infonce_masked").objective == "infonce_masked"


def test_table_lists_every_row():
    rows = [AblationRow("on", 0.5, 0.4, 0.08), AblationRow("off", 0.1, 0.2, 0.01)]
    text = format_table("stop_gradient", rows)
    assert text.count("\n") >= 3 and "on" in text and "off" in text


def test_visualize_files_and_determinism(eight, tmp_path):
    model = build_model(tiny_cfg())
    first = visualize(model, eight, [0], tmp_path / "a")
    second = visualize(model, eight, [0], tmp_path / "b")
    names = sorted(p.split("/")[-1] for p in map(str, first))
    assert names == sorted(["0_input.ppm"] + [f"0_t{t}.ppm" for t in range(1, 6)])
    for a, b in zip(sorted(map(str, first)), sorted(map(str, second))):
        assert open(a, "rb").read() == open(b, "rb").read()
    heat = read_ppm(tmp_path / "a" / "0_t5.ppm")
    assert heat.min() == 0 and heat.max() == 255


def test_visualize_input_has_red_outline(eight, tmp_path):
    model = build_model(tiny_cfg())
    visualize(model, eight, [1], tmp_path)
    img = read_ppm(tmp_path / "1_input.ppm")
    x0, y0, x1, y1 = eight[1].gt_box
    assert tuple(img[y0, x0]) == (255, 0, 0) and tuple(img[y1 - 1, x1 - 1]) == (255, 0, 0)


def test_visualize_bad_index(eight, tmp_path):
    from sspl.errors import UsageError

    with pytest.raises(UsageError):
        visualize(build_model(tiny_cfg()), eight, [99], tmp_path)


def test_untrained_map_is_finite(eight):
    model = build_model(tiny_cfg())
    maps = model.localization_map(eight.images[:2], eight.spectrograms[:2])
    assert np.isfinite(maps).all() and maps.shape == (2, 64, 64)
