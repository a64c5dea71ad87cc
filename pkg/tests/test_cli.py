import json

import numpy as np
import pytest

from bcpredict import cli, config as cfgmod
from bcpredict.corpus import read_manifest
from bcpredict.features import PcmAudio, cache_read, write_wav

SMALL = ["--set", "synth_n_instances=240", "--set", "synth_split_sizes=160,40,40",
         "--set", "n_filters=4", "--set", "max_epochs=3", "--seed", "5"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def pipeline(d, variant="AC_SLI_NTN"):
    assert run("synth", "--out", d, "--rule", "audio_plus_listener", *SMALL) == 0
    m = d / "manifest.jsonl"
    assert run("train", "--manifest", m, "--out", d, "--variant", variant, *SMALL) == 0
    assert run("eval", "--manifest", m, "--out", d, "--variant", variant, *SMALL) == 0
    assert run("embeddings", "--manifest", m, "--out", d, "--variant", variant, *SMALL) == 0


def test_synth_train_eval_smoke(tmp_path):
    pipeline(tmp_path)
    body = json.loads((tmp_path / "eval.json").read_text())
    assert body["n_instances"] == 40 and body["split"] == "test"
    assert 0.0 <= body["accuracy"] <= 1.0
    csv = (tmp_path / "eval.csv").read_text().splitlines()
    assert csv[0].startswith("# config_hash=") and "seed=5" in csv[0]
    for name in ("model.ckpt", "history.csv", "listeners.csv", "scatter.svg", "histogram.svg",
                 "boxplot.svg", "histogram.csv", "stats.csv", "manifest.jsonl.meta.json",
                 "train.config.txt", "eval.config.txt"):
        assert (tmp_path / name).exists(), name
    assert "<!-- config_hash=" in (tmp_path / "scatter.svg").read_text()


def test_reruns_are_byte_identical(tmp_path):
    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b")
    names = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(names) > 15
    for n in names:
        if n.name.endswith(".config.txt"):
            continue  # records the output path itself
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_annotate_toy(tmp_path, caplog):
    tsv = tmp_path / "t.tsv"
    tsv.write_text("\n".join([
        "dialog_id\tchannel\tspeaker_id\tstart_ms\tend_ms\tact\ttext",
        "d1\tA\tspk1\t0\t60000\tsd\tlong story",
        "d1\tB\tspk2\t10000\t10400\tb\tyeah",
        "d1\tB\tspk2\t20000\t20400\tb\tuh-huh",
        "d1\tB\tspk2\t30000\t30400\tb\tyeah [laughter]",
    ]) + "\n")
    with caplog.at_level("INFO"):
        assert run("annotate", "--transcripts", tsv, "--out", tmp_path / "o",
                   "--set", "split_sizes=1,0,0") == 0
    insts = read_manifest(tmp_path / "o" / "manifest.jsonl")
    assert sorted(i.label for i in insts) == ["NO_BC", "NO_BC", "UH_HUH", "YEAH"]
    rej = (tmp_path / "o" / "rejections.tsv").read_text().splitlines()
    assert len(rej) == 2 and rej[1].endswith("yeah [laughter]")
    assert any("rejected" in r.message for r in caplog.records)
    stats = (tmp_path / "o" / "stats.csv").read_text().splitlines()
    assert "No-BC,2,50.0" in stats


def test_grid_two_points(tmp_path):
    assert run("synth", "--out", tmp_path, *SMALL) == 0
    assert run("grid", "--manifest", tmp_path / "manifest.jsonl", "--out", tmp_path,
               "--grid", "dropout=0.1,0.3", *SMALL) == 0
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert lines[0].startswith("# ")
    assert lines[1].startswith("rank,")
    assert len(lines) == 4
    assert (tmp_path / "best.ckpt").exists()


def test_features_command(tmp_path):
    wav = tmp_path / "w" / "x_A.wav"
    wav.parent.mkdir()
    rng = np.random.default_rng(0)
    write_wav(wav, PcmAudio(rng.integers(-2000, 2000, 16000).astype(np.int16), 8000))
    assert run("features", "--audio", wav.parent, "--out", tmp_path, "--cache-dir", tmp_path / "c") == 0
    assert cache_read(tmp_path / "c" / "x_A.bcmf").shape == (198, 13)
    assert (tmp_path / "c" / "features.meta.json").exists()


def test_config_error_exit_code(tmp_path, capsys):
    assert run("synth", "--out", tmp_path, "--set", "no_such_key=1") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and "no_such_key" in err["message"]
    assert run("train", "--out", tmp_path, "--variant", "AC_BOGUS") == 2
    assert run("train", "--out", tmp_path) == 2  # manifest missing


def test_runtime_error_exit_code(tmp_path, capsys):
    assert run("train", "--manifest", tmp_path / "absent.jsonl", "--out", tmp_path) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "IoFailure"


def test_config_precedence(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("# comment\nseed = 1\nn_filters = 8\nlearning_rate = 0.5\nvariant = AC_L\n")
    args = cli.build_parser().parse_args(
        ["train", "--config", str(f), "--set", "seed=2", "--set", "n_filters=32", "--seed", "3",
         "--sli", "bilinear", "--frames", "98"])
    cfg = cli.resolve_config(args)
    assert (cfg.seed, cfg.n_filters, cfg.learning_rate, cfg.variant, cfg.n_frames) == \
        (3, 32, 0.5, "AC_SLI_BILINEAR", 98)


def test_config_file_errors(tmp_path):
    with pytest.raises(cfgmod.ConfigError, match=":2:"):
        cfgmod.parse_text("seed = 1\nnot a pair\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_text("n_filters = lots\n")
    cfg = cfgmod.parse_text("grid_filter_widths = 10; 11\ngrid_n_filters = 16, 32\n")
    assert cfg.grid == {"filter_widths": [(10,), (11,)], "n_filters": [16, 32]}
    assert "grid_filter_widths = 10; 11" in cfg.resolved_text()


def test_features_rejects_bad_audio(tmp_path, capsys):
    (tmp_path / "junk.wav").write_bytes(b"not a wav file")
    assert run("features", "--audio", tmp_path / "junk.wav", "--out", tmp_path) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "IoFailure"
