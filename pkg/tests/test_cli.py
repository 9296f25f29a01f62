import json

import numpy as np
import pytest

from decoclip.cli import main
from decoclip.pairing import read_matrix
from decoclip.report import parse_records


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.yaml").write_text("n_images: 80\nn_sentences: 80\n")
    (root / "cfg.yaml").write_text("preset: desk\nepochs: 2\nbatch_size: 20\n")
    assert main(["gen-synthetic", "--spec", str(root / "spec.yaml"), "--seed", "0", "--out", str(root / "syn")]) == 0
    assert main(["gen-synthetic", "--spec", str(root / "spec.yaml"), "--seed", "1", "--out", str(root / "test")]) == 0
    assert main(["pretrain", "--config", str(root / "cfg.yaml"), "--images", str(root / "syn"),
                 "--texts", str(root / "syn" / "texts.jsonl"), "--out", str(root / "ckpt")]) == 0
    return root


def test_pretrain_outputs(workspace):
    ck = workspace / "ckpt"
    assert (ck / "final" / "manifest.json").exists()
    assert (ck / "training_curve.png").stat().st_size > 0
    assert len((ck / "metrics.jsonl").read_text().splitlines()) == 8


def test_zeroshot_report_and_figure(workspace, capsys):
    out = workspace / "zs"
    assert main(["zeroshot", "--ckpt", str(workspace / "ckpt" / "final"), "--data", str(workspace / "test"),
                 "--ensemble", "--runs", "2", "--out", str(out)]) == 0
    rec = parse_records((out / "report.txt").read_text())
    assert 0.0 <= float(rec["accuracy"]) <= 1.0 and rec["runs"] == "2"
    assert (out / "confusion.png").stat().st_size > 0
    assert "accuracy=" in capsys.readouterr().out


def test_retrieve_writes_histograms(workspace):
    out = workspace / "ret"
    assert main(["retrieve", "--ckpt", str(workspace / "ckpt" / "final"), "--queries", str(workspace / "test"),
                 "--candidates", str(workspace / "syn" / "texts.jsonl"), "--out", str(out)]) == 0
    rec = parse_records((out / "report.txt").read_text())
    assert {"precision@1", "precision@10"} <= set(rec)
    assert len(list(out.glob("histogram_*.png"))) == 5
    assert len(list(out.glob("histogram_*.tsv"))) == 5
    assert (out / "rankings.tsv").exists()


def test_finetune(workspace):
    out = workspace / "ft"
    assert main(["finetune", "--ckpt", str(workspace / "ckpt" / "final"), "--train", str(workspace / "syn"),
                 "--test", str(workspace / "test"), "--epochs", "20", "--out", str(out)]) == 0
    assert (out / "report.txt").exists() and (out / "confusion.png").exists()


def test_export_embeddings(workspace):
    out = workspace / "emb" / "img.f32"
    assert main(["export-embeddings", "--ckpt", str(workspace / "ckpt" / "final"),
                 "--data", str(workspace / "test"), "--out", str(out)]) == 0
    emb, meta = read_matrix(out)
    assert emb.shape == (80, 32) and len(meta["ids"]) == 80


def test_extract_labels_and_matrix(tmp_path):
    reports = tmp_path / "r.jsonl"
    reports.write_text(json.dumps({"id": "a", "text": "Mild pulmonary edema. No pleural effusion is seen."}) + "\n")
    assert main(["extract-labels", "--input", str(reports), "--output", str(tmp_path / "s.jsonl")]) == 0
    rows = [json.loads(x) for x in (tmp_path / "s.jsonl").read_text().splitlines()]
    assert [r["findings"] for r in rows] == [["Edema"], ["No Finding"]]
    assert rows[1]["trace"][0]["polarity"] == "negated"
    assert main(["build-matrix", "--images", str(tmp_path / "s.jsonl"), "--texts", str(tmp_path / "s.jsonl"),
                 "--out", str(tmp_path / "m.f32")]) == 0
    s, _ = read_matrix(tmp_path / "m.f32")
    np.testing.assert_array_equal(s, np.eye(2, dtype=np.float32))


def test_extract_labels_unmapped_class(tmp_path, capsys):
    (tmp_path / "c.csv").write_text("id,class_name\nx,Normal\ny,Unicorn\n")
    assert main(["extract-labels", "--input", str(tmp_path / "c.csv"), "--output", str(tmp_path / "o.jsonl")]) == 2
    assert "Unicorn" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, workspace, capsys):
    (tmp_path / "bad.yaml").write_text("learnig_rate: 0.1\n")
    code = main(["pretrain", "--config", str(tmp_path / "bad.yaml"), "--images", str(workspace / "syn"),
                 "--texts", str(workspace / "syn" / "texts.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 2 and "learnig_rate" in capsys.readouterr().err
