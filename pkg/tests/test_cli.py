import json
import subprocess
import sys
from pathlib import Path

import pytest

from singgraph import __version__
from singgraph.cli import main
from singgraph.config import apply_override, load_config, parse_value
from singgraph.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL_MODEL = ["--set", "model.n_bins=4", "--set", "model.encoder_channels=[4, 4]",
               "--set", "model.d_node=8"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    assert main(["manifest", "synth", "--out", str(root), "--n-clips", "8", "--dur", "8",
                 "--val-clips", "2"]) == 0
    return root / "manifest.jsonl"


def _tsv(path, rows):
    path.write_text("".join("\t".join(map(str, r)) + "\n" for r in rows))
    return path


# ---------------------------------------------------------------- config


def test_parse_value():
    assert parse_value("3") == 3 and parse_value("1e-3") == 1e-3
    assert parse_value("true") is True and parse_value("[4, 4]") == [4, 4]
    assert parse_value("IV") == "IV" and parse_value('"IV"') == "IV"


def test_override_forms():
    doc = {}
    apply_override(doc, "train.epochs=3")
    apply_override(doc, "d_node=12")
    assert doc == {"train": {"epochs": 3}, "model": {"d_node": 12}}


@pytest.mark.parametrize("item,needle", [("train.nope=1", "nope"), ("bogus.x=1", "bogus"),
                                         ("wat=2", "wat"), ("seed=2", "ambiguous"), ("epochs", "KEY=VALUE")])
def test_override_errors_name_the_key(item, needle):
    with pytest.raises(ConfigError, match=needle):
        apply_override({}, item)


def test_config_file_and_global_seed(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nepochs = 4\nseed = 1\n[rawboost]\nsnr_db_min = 12.0\n")
    cfg = load_config(str(p), ["train.lr=0.01"], seed=99)
    assert cfg.train.epochs == 4 and cfg.train.lr == 0.01 and cfg.rawboost.snr_db_min == 12.0
    assert cfg.train.seed == cfg.model.seed == cfg.gradcheck.seed == 99


def test_config_file_unknown_key(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[model]\nwidth = 3\n")
    with pytest.raises(ConfigError, match="width"):
        load_config(str(p))
    p.write_text("[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match="extras"):
        load_config(str(p))


def test_shipped_configs_load():
    for p in sorted(CONFIGS.glob("*.toml")):
        load_config(str(p))


# ---------------------------------------------------------------- exit codes


def test_version(capsys):
    assert run(capsys, "version") == (0, f"singgraph {__version__}\n", "")


def test_unknown_flag_is_usage_error(capsys):
    code, out, err = run(capsys, "eer", "--scores", "x.tsv", "--frobnicate")
    assert code == 2 and out == "" and "usage" in err


def test_missing_subcommand(capsys):
    assert run(capsys, )[0] == 2


def test_bad_seed_is_usage_error(capsys):
    assert run(capsys, "version", "--seed", "-1")[0] == 2
    assert run(capsys, "version", "--seed", str(2 ** 64))[0] == 2


def test_bad_config_key_exits_1_and_names_it(capsys, tmp_path):
    scores = _tsv(tmp_path / "s.tsv", [("a", 0.9, "bonafide"), ("b", 0.1, "spoof")])
    code, out, err = run(capsys, "eer", "--scores", scores, "--set", "train.nonsense=1")
    assert code == 1 and "nonsense" in err and out == ""


def test_missing_input_file(capsys, tmp_path):
    code, _, err = run(capsys, "eer", "--scores", tmp_path / "absent.tsv")
    assert code == 1 and "absent.tsv" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "singgraph", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


# ---------------------------------------------------------------- eer


def test_eer_perfect_separation(capsys, tmp_path):
    scores = _tsv(tmp_path / "s.tsv", [("a", 0.9, "bonafide"), ("b", 0.8, "bonafide"),
                                       ("c", 0.1, "spoof"), ("d", 0.2, "spoof")])
    code, out, _ = run(capsys, "eer", "--scores", scores)
    assert code == 0 and out.splitlines()[0] == "EER\t0.000000"


def test_eer_needs_labels(capsys, tmp_path):
    scores = _tsv(tmp_path / "s.tsv", [("a", 0.9), ("b", 0.1)])
    assert run(capsys, "eer", "--scores", scores)[0] == 1


def test_eer_report_files(capsys, tmp_path):
    scores = _tsv(tmp_path / "s.tsv", [(f"c{i}", i / 10, "bonafide" if i % 3 else "spoof") for i in range(12)])
    rep = tmp_path / "rep"
    assert run(capsys, "eer", "--scores", scores, "--report", rep)[0] == 0
    assert (rep / "scores.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    lines = (rep / "eer.tsv").read_text().splitlines()
    assert lines[0].startswith("EER\t") and lines[2:] == ["bonafide\t8", "spoof\t4"]
    assert (rep / "operating_points.tsv").read_text().startswith("threshold\tfar\tfrr\n")


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_tiny(capsys):
    code, out, _ = run(capsys, "gradcheck", "--config", CONFIGS / "tiny.toml")
    lines = out.splitlines()
    assert code == 0
    assert sum(line.startswith("op\t") for line in lines) >= 20
    err = float(lines[-1].split("\t")[1])
    assert lines[-1].startswith("max_rel_error\t") and err < 1e-5


def test_gradcheck_fails_at_impossible_tolerance(capsys):
    code, _, _ = run(capsys, "gradcheck", "--config", CONFIGS / "tiny.toml", "--skip-ops",
                     "--set", "gradcheck.tol=1e-30")
    assert code == 1


# ---------------------------------------------------------------- pipeline


def test_manifest_validate(capsys, corpus):
    code, out, _ = run(capsys, "manifest", "validate", "--manifest", corpus)
    assert code == 0
    assert out.splitlines()[0] == "split\tlabel\tclips" and "violations\t0" in out


def test_manifest_validate_reports_overlap(capsys, corpus, tmp_path):
    rows = [json.loads(line) for line in corpus.read_text().splitlines()[1:]]
    rows[1]["split"] = "T02"
    rows[1]["singer_id"] = rows[0]["singer_id"]
    bad = tmp_path / "m.jsonl"
    bad.write_text(corpus.read_text().splitlines()[0] + "\n" + "".join(json.dumps(r) + "\n" for r in rows))
    code, out, _ = run(capsys, "manifest", "validate", "--manifest", bad)
    assert code == 1 and f"violation\t{rows[0]['singer_id']}\tT02" in out


def test_merge_beats(capsys, corpus, tmp_path):
    first = json.loads(corpus.read_text().splitlines()[1])["clip_id"]
    ann = tmp_path / "ann"
    ann.mkdir()
    (ann / f"{first}.json").write_text(json.dumps({"bpm": 77.0, "downbeats": [0.1, 3.2]}))
    out_path = corpus.parent / "merged.jsonl"
    code, out, _ = run(capsys, "manifest", "merge-beats", "--manifest", corpus, "--annotations", ann,
                       "--out", out_path)
    assert code == 0 and out.startswith("merged\t1\n")
    assert json.loads(out_path.read_text().splitlines()[1])["tempo_bpm"] == 77.0


def test_dry_run_has_no_side_effects(capsys, corpus, tmp_path):
    before = sorted(p.name for p in tmp_path.iterdir())
    for argv in (["train", "--manifest", corpus, "--out", tmp_path / "m.ckpt", "--report", tmp_path / "r"],
                 ["augment", "--manifest", corpus, "--out", tmp_path / "aug"],
                 ["manifest", "synth", "--out", tmp_path / "syn"]):
        code, out, _ = run(capsys, *argv, "--dry-run", "--set", "train.epochs=3")
        assert code == 0
        doc = json.loads(out)
        assert doc["config"]["train"]["epochs"] == 3
    assert sorted(p.name for p in tmp_path.iterdir()) == before


def test_augment_stdout_deterministic(capsys, corpus, tmp_path):
    outs = []
    for i, jobs in enumerate((1, 1, 3)):
        code, out, _ = run(capsys, "augment", "--manifest", corpus, "--out", tmp_path / f"a{i}",
                           "--seed", 11, "--jobs", jobs)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1] == outs[2]
    header, *rows = outs[0].splitlines()
    assert header == "clip_id\treplacement\toffset_s\trealized_snr_db\tseed"
    assert len(rows) == 6
    for row in rows:
        cid = row.split("\t")[0]
        prov = json.loads((tmp_path / "a0" / f"{cid}.json").read_text())
        assert prov["seed"] == int(row.split("\t")[4])
        assert (tmp_path / "a2" / f"{cid}_voc.wav").read_bytes() == (tmp_path / "a0" / f"{cid}_voc.wav").read_bytes()


def test_augment_report_png(capsys, corpus, tmp_path):
    first = json.loads(corpus.read_text().splitlines()[1])["clip_id"]
    code, _, _ = run(capsys, "augment", "--manifest", corpus, "--out", tmp_path, "--clips", first, "--report")
    assert code == 0 and (tmp_path / f"{first}_vocal.png").stat().st_size > 0


def test_train_score_eer_pipeline(capsys, corpus, tmp_path):
    common = ["--seed", 3, *SMALL_MODEL, "--set", "train.epochs=2", "--set", "train.clip_dur_s=2.0"]
    outs = []
    for tag in ("a", "b"):
        code, out, _ = run(capsys, "train", "--manifest", corpus, "--out", tmp_path / f"{tag}.ckpt",
                           "--log", tmp_path / f"{tag}.jsonl", "--report", tmp_path / f"rep_{tag}", *common)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1] and outs[0].startswith("epochs\t2\n")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "rep_a" / "training.png").exists()
    assert (tmp_path / "rep_a" / "training.tsv").read_text().count("\n") == 3

    for tag in ("a", "b"):
        code, out, _ = run(capsys, "score", "--checkpoint", tmp_path / "a.ckpt", "--manifest", corpus,
                           "--split", "val", "--out", tmp_path / f"{tag}.tsv", "--report", tmp_path / f"s_{tag}")
        assert code == 0 and out.startswith("scored\t2\nfailed\t0\n")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert (tmp_path / "s_a" / "scores.png").read_bytes() == (tmp_path / "s_b" / "scores.png").read_bytes()

    code, out, _ = run(capsys, "eer", "--scores", tmp_path / "a.tsv")
    assert code == 0 and out.startswith("EER\t")
