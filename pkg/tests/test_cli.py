import pytest

from sketch_retrieval import cli_main
from sketch_retrieval.data import load_corpus
from sketch_retrieval.explain import read_provenance


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, tiny_cli_args):
    root = tmp_path_factory.mktemp("cli")
    corpus, checkpoint = root / "corpus", root / "model.ckpt"
    assert cli_main([*tiny_cli_args, "gen-data", "--out", str(corpus)]) == 0
    train = ["train", "--data", str(corpus), "--epochs", "1"]
    assert cli_main([*tiny_cli_args, "--checkpoint", str(checkpoint), *train]) == 0
    return root, corpus, checkpoint


def _first_test_pair(corpus):
    sketch, photo = load_corpus(corpus).pairs("test")[0]
    return corpus / sketch.path, corpus / photo.path


def test_gen_data_and_train(workspace):
    root, corpus, checkpoint = workspace
    loaded = load_corpus(corpus)
    assert len(loaded.records) == 12
    assert checkpoint.exists()
    assert (root / "model.ckpt.conf").exists()
    assert (root / "model.ckpt.loss.csv").exists()


@pytest.mark.parametrize("mode", ["ret", "rn"])
def test_eval_writes_report_and_rankings(workspace, tmp_path, capsys, mode):
    _, corpus, checkpoint = workspace
    args = ["--checkpoint", str(checkpoint), "eval", "--data", str(corpus), "--mode", mode]
    assert cli_main([*args, "--k", "1", "2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert f"mode\t{mode}" in out
    assert (tmp_path / f"metrics_{mode}.txt").read_text(encoding="utf-8").startswith("# sketch-retrieval metrics v1")
    assert (tmp_path / f"rankings_{mode}.tsv").exists()
    assert "prec@2" in out


def test_attention_map(workspace, tmp_path):
    _, corpus, checkpoint = workspace
    sketch, _ = _first_test_pair(corpus)
    out = tmp_path / "attn.pgm"
    assert cli_main(["--checkpoint", str(checkpoint), "attn-map", "--image", str(sketch), "--out", str(out)]) == 0
    assert out.exists()
    assert (tmp_path / "attn.alive.pgm").exists()


def test_correspond_with_kernel(workspace, tmp_path):
    _, corpus, checkpoint = workspace
    sketch, photo = _first_test_pair(corpus)
    out, kernel = tmp_path / "corr.tsv", tmp_path / "kernel.tsv"
    args = ["--checkpoint", str(checkpoint), "correspond", "--sketch", str(sketch), "--photo", str(photo)]
    assert cli_main([*args, "--top-k", "2", "--out", str(out), "--kernel-out", str(kernel)]) == 0
    assert len(out.read_text(encoding="utf-8").splitlines()) == 2 + 4 * 2
    assert kernel.exists()


def test_synth_writes_provenance(workspace, tmp_path):
    _, corpus, checkpoint = workspace
    sketch, _ = _first_test_pair(corpus)
    out = tmp_path / "synth.ppm"
    args = ["--checkpoint", str(checkpoint), "synth", "--data", str(corpus), "--sketch", str(sketch)]
    assert cli_main([*args, "--mode", "gallery", "--k", "2", "--out", str(out)]) == 0
    assert out.exists()
    assert len(read_provenance(tmp_path / "synth.provenance.tsv")) == 4 * 2


def test_influence(workspace, capsys):
    _, corpus, checkpoint = workspace
    sketch, photo = _first_test_pair(corpus)
    args = ["--checkpoint", str(checkpoint), "influence", "--sketch", str(sketch), "--photo", str(photo)]
    assert cli_main([*args, "--granularity", "token"]) == 0
    assert "(token)" in capsys.readouterr().out


def test_missing_corpus_names_the_manifest(tmp_path, capsys):
    assert cli_main(["train", "--data", str(tmp_path / "nowhere")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("[sketch-retrieval] error:")
    assert "manifest.tsv" in err
    assert "gen-data" in err


def test_missing_checkpoint(workspace, tmp_path, capsys):
    _, corpus, _ = workspace
    assert cli_main(["--checkpoint", str(tmp_path / "none.ckpt"), "eval", "--data", str(corpus)]) == 1
    assert "none.ckpt" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["paint"], ["eval", "--mode", "knn"]])
def test_usage_errors_exit_two(argv):
    assert cli_main(argv) == 2


def test_bad_override_is_reported(capsys):
    assert cli_main(["--set", "train.nope=1", "gen-data"]) == 1
    assert "unknown key 'train.nope'" in capsys.readouterr().err


def test_unknown_log_level_falls_back(tmp_path, capsys, tiny_cli_args):
    args = [*tiny_cli_args, "--log-level", "chatty", "gen-data", "--out", str(tmp_path / "c")]
    assert cli_main(args) == 0
    assert "falling back to INFO" in capsys.readouterr().err


def test_pipeline_is_bit_reproducible(tmp_path, tiny_cli_args):
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        corpus, checkpoint = root / "corpus", root / "model.ckpt"
        assert cli_main([*tiny_cli_args, "gen-data", "--out", str(corpus)]) == 0
        common = [*tiny_cli_args, "--checkpoint", str(checkpoint)]
        assert cli_main([*common, "train", "--data", str(corpus), "--epochs", "1"]) == 0
        assert cli_main([*common, "eval", "--data", str(corpus), "--mode", "rn", "--out", str(root)]) == 0
        names = ["corpus/manifest.tsv", "model.ckpt", "model.ckpt.loss.csv", "metrics_rn.txt", "rankings_rn.tsv"]
        outputs.append([(root / name).read_bytes() for name in names])
    assert outputs[0] == outputs[1]


def test_cross_eval_on_unseen_shape_families(workspace, tmp_path, capsys, tiny_cli_args):
    _, _, checkpoint = workspace
    target = tmp_path / "target"
    gen = ["gen-data", "--out", str(target), "--categories", "3", "--first-category", "3", "--test-only"]
    assert cli_main([*tiny_cli_args, "--seed", "9", *gen]) == 0
    assert load_corpus(target).splits["train"] == []
    out_dir = tmp_path / "cross"
    args = ["--checkpoint", str(checkpoint), "cross-eval", "--data", str(target), "--mode", "ret"]
    assert cli_main([*args, "--out", str(out_dir)]) == 0
    assert "mode\tret" in capsys.readouterr().out
    assert (out_dir / "metrics_cross_ret.txt").exists()
    assert (out_dir / "rankings_cross_ret.tsv").exists()


def test_cross_eval_rejects_the_training_corpus_families(workspace, tmp_path, capsys, tiny_cli_args):
    _, _, checkpoint = workspace
    target = tmp_path / "same"
    assert cli_main([*tiny_cli_args, "gen-data", "--out", str(target), "--test-only"]) == 0
    args = ["--checkpoint", str(checkpoint), "cross-eval", "--data", str(target)]
    assert cli_main(args) == 1
    assert "seen in training" in capsys.readouterr().err
