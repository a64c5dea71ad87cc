import numpy as np
import pytest

from bcpredict.analysis import evaluate
from bcpredict.corpus import SynthConfig, synth_corpus
from bcpredict.errors import DivergedLoss, EmptySplit, InvalidConfig
from bcpredict.training import (
    GRID_RANGES,
    TrainConfig,
    build_model,
    enumerate_grid,
    grid_csv,
    grid_search,
    make_batch,
    split_instances,
    train,
)

FAST = dict(n_filters=8, max_epochs=30, patience=5)


def test_audio_only_trains_to_high_accuracy(small_audio_corpus):
    sc = small_audio_corpus
    model, hist = train(TrainConfig(**FAST), sc.instances, sc.features)
    tr = make_batch(model, split_instances(sc.instances, "train"), sc.features)
    assert evaluate(model, tr).accuracy >= 0.95
    assert len(hist.train_loss) <= 30


def test_history_invariants(small_audio_corpus):
    sc = small_audio_corpus
    _, hist = train(TrainConfig(**FAST, seed=2), sc.instances, sc.features)
    f1 = hist.dev_macro_f1
    assert len(f1) == len(hist.dev_accuracy) == len(hist.train_loss)
    assert hist.best_epoch == int(np.argmax(f1))  # argmax returns the earliest maximum
    assert hist.stop_reason in ("patience", "max_epochs")
    if hist.stop_reason == "patience":
        assert len(f1) - 1 - hist.best_epoch == FAST["patience"]


def test_restores_best_epoch(small_audio_corpus):
    sc = small_audio_corpus
    model, hist = train(TrainConfig(**FAST), sc.instances, sc.features)
    dev = make_batch(model, split_instances(sc.instances, "dev"), sc.features)
    assert evaluate(model, dev).macro_f1 == hist.dev_macro_f1[hist.best_epoch]


def test_byte_identical_checkpoints(tmp_path, small_listener_corpus):
    sc = small_listener_corpus
    cfg = TrainConfig(variant="AC_SLI_NTN", n_filters=4, max_epochs=3, dropout=0.3, seed=11)
    train(cfg, sc.instances, sc.features, tmp_path / "a.ckpt")
    train(cfg, sc.instances, sc.features, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_zero_learning_rate_is_a_no_op(small_audio_corpus):
    sc = small_audio_corpus
    cfg = TrainConfig(learning_rate=0.0, n_filters=4, max_epochs=4, patience=10)
    model, hist = train(cfg, sc.instances, sc.features)
    init = build_model(cfg, sc.instances)
    assert all(np.array_equal(model.params[k], init.params[k]) for k in init.params)
    assert len(set(hist.dev_macro_f1)) == 1 and len(set(hist.dev_accuracy)) == 1


def test_empty_splits(small_audio_corpus):
    insts = small_audio_corpus.instances
    with pytest.raises(EmptySplit):
        train(TrainConfig(), [i for i in insts if i.split != "train"], small_audio_corpus.features)
    with pytest.raises(EmptySplit):
        train(TrainConfig(), [i for i in insts if i.split != "dev"], small_audio_corpus.features)


def test_nan_loss_is_reported(small_audio_corpus):
    sc = small_audio_corpus
    feats = {k: v.copy() for k, v in sc.features.items()}
    first = split_instances(sc.instances, "train")[0]
    feats[first.audio_path[:-4]][:] = np.nan
    with pytest.raises(DivergedLoss, match="learning_rate"):
        train(TrainConfig(n_filters=4, max_epochs=2), sc.instances, feats)


def test_full_grid_size():
    configs = enumerate_grid(GRID_RANGES)
    assert len(configs) == 3 * 4 * 3 * 4 * 4 == 576
    for c in configs:
        c.check_grid_values()
    assert len({tuple(sorted(vars(c).items())) for c in configs}) == 576


def test_grid_value_ranges():
    with pytest.raises(InvalidConfig):
        TrainConfig(n_filters=17).check_grid_values()
    with pytest.raises(InvalidConfig):
        TrainConfig(pool_rows=5).check_grid_values()
    TrainConfig(n_filters=17)  # free values are fine in manual mode
    with pytest.raises(InvalidConfig):
        enumerate_grid({"bogus": [1]})


def test_singleton_grid(small_audio_corpus):
    sc = small_audio_corpus
    runs = grid_search({"n_filters": [4]}, sc.instances, sc.features,
                       base=TrainConfig(max_epochs=2))
    assert len(runs) == 1 and runs[0].config.n_filters == 4
    lines = grid_csv(runs).splitlines()
    assert len(lines) == 2 and lines[1].startswith("1,")


def test_zero_rate_ranks_last(tmp_path, small_audio_corpus):
    sc = small_audio_corpus
    runs = grid_search({"learning_rate": [0.0, 0.01]}, sc.instances, sc.features,
                       base=TrainConfig(**FAST), out_dir=tmp_path)
    assert [r.config.learning_rate for r in runs] == [0.01, 0.0]
    assert runs[0].dev.macro_f1 > runs[1].dev.macro_f1
    assert all((tmp_path / f"run{i:04d}.ckpt").exists() for i in range(2))


def test_grid_tie_break_by_config_order(small_audio_corpus):
    # identical runs apart from a field that never affects training here
    sc = small_audio_corpus
    runs = grid_search({"max_epochs": [2, 1]}, sc.instances, sc.features,
                       base=TrainConfig(n_filters=4, learning_rate=0.0))
    assert [r.config.max_epochs for r in runs] == [1, 2]


def test_listener_corpus_needs_listener():
    sc = synth_corpus(SynthConfig(rule="audio_plus_listener", n_instances=450,
                                  split_sizes=(300, 75, 75), noise=0.3, seed=1))
    cfg = dict(n_filters=8, max_epochs=40, patience=40)
    ac, _ = train(TrainConfig(variant="AC", **cfg), sc.instances, sc.features)
    ntn, _ = train(TrainConfig(variant="AC_SLI_NTN", **cfg), sc.instances, sc.features)
    dev = split_instances(sc.instances, "dev")
    acc_ac = evaluate(ac, make_batch(ac, dev, sc.features)).accuracy
    acc_ntn = evaluate(ntn, make_batch(ntn, dev, sc.features)).accuracy
    assert acc_ac <= 0.5 < acc_ntn


def test_restricted_grid_rejects_free_values(small_audio_corpus):
    sc = small_audio_corpus
    with pytest.raises(InvalidConfig):
        grid_search({"dropout": [0.1]}, sc.instances, sc.features, base=TrainConfig(n_filters=4),
                    restrict=True)
