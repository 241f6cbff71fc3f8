import csv

import pytest
from conftest import published_scale_catalog

from pseudosyn.catalog import load_manifest, write_manifest
from pseudosyn.cli import EXIT_DATA, EXIT_DEPENDENCY, EXIT_OK, EXIT_USAGE, main
from pseudosyn.pipeline import read_artifacts


def _usage(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


def test_usage_errors_exit_1(capsys):
    assert _usage([]) == EXIT_USAGE
    assert _usage(["plan", "--baseline", "1,2,3"]) == EXIT_USAGE
    assert _usage(["run", "--config", "x.yaml", "--phase", "deploy"]) == EXIT_USAGE
    assert main(["plan"]) == EXIT_USAGE
    assert main(["train", "--manifest", "m.csv", "--out", "o"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_plan_published_counts(capsys, tmp_path):
    code = main(["plan", "--baseline", "2552,2555,227,621", "--pseudo", "4348,2103,189,321", "--out", str(tmp_path / "p.csv")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    for cell in ("12,916 ( 25.00 %)", "51,664 (100.00 %)", "621 (  1.20 %)", "x8.676", "1:3"):
        assert cell in out, cell
    rows = list(csv.DictReader((tmp_path / "p.csv").open()))
    assert [r["synthetic"] for r in rows] == ["6016", "8258", "12500", "11974", "38748"]


def test_plan_from_manifest_and_verify(tmp_path, tiny_image_file, capsys):
    manifest = write_manifest(published_scale_catalog(str(tiny_image_file), with_pseudo=True), tmp_path / "m.csv")
    assert main(["plan", "--manifest", str(manifest)]) == EXIT_OK
    assert "51,664" in capsys.readouterr().out
    # nothing synthesized yet: every quota falls short
    assert main(["verify", "--manifest", str(manifest)]) == EXIT_DATA
    assert "shortfall 6016" in capsys.readouterr().out


def test_data_and_dependency_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.yaml"), "--phase", "baseline"]) == EXIT_DATA
    assert main(["report", str(tmp_path)]) == EXIT_DEPENDENCY
    (tmp_path / "bad.yaml").write_text("manifest: m.csv\noutput_dir: run\nclassifiers: {}\nensemble: {baseline: [b1]}\n")
    assert main(["run", "--config", str(tmp_path / "bad.yaml"), "--phase", "baseline"]) == EXIT_DEPENDENCY
    (tmp_path / "broken.yaml").write_text("manifest: [unclosed\n")
    assert main(["run", "--config", str(tmp_path / "broken.yaml"), "--phase", "baseline"]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "dependency error" in err and "data error" in err


def test_prepare_folders(tmp_path, tiny_image_file, capsys):
    import shutil

    for split, cls in (("train_labeled", "none"), ("train_labeled", "both"), ("test", None)):
        d = tmp_path / "data" / split / (cls or "")
        d.mkdir(parents=True, exist_ok=True)
        shutil.copy(tiny_image_file, d / "a.png")
    assert main(["prepare", "--folders", str(tmp_path / "data")]) == EXIT_OK
    catalog = load_manifest(tmp_path / "data" / "manifest.csv")
    assert len(catalog) == 3 and catalog.get("train_labeled/both/a").label.key == "both"
    assert main(["prepare", "--folders", str(tmp_path / "nowhere")]) == EXIT_DATA


def test_module_commands_on_toy_run(toy_run, tmp_path, capsys):
    config, _, _ = toy_run
    base = read_artifacts(config.output_dir / "baseline")
    manifest = str(config.manifest)
    b1, b2 = str(base["predictions/b1/validation"]), str(base["predictions/b2/validation"])

    assert main(["ensemble", b1, b2, "--out", str(tmp_path / "ensemble.csv")]) == EXIT_OK
    assert (tmp_path / "ensemble.csv").read_bytes() == base["predictions/ensemble/validation"].read_bytes()
    assert main(["evaluate", "--predictions", str(tmp_path / "ensemble.csv"), "--manifest", manifest,
                 "--out", str(tmp_path / "eval.csv")]) == EXIT_OK
    assert main(["evaluate", "--compare", str(tmp_path / "eval.csv"), str(tmp_path / "eval.csv")]) == EXIT_OK
    assert "+0.00 pp" in capsys.readouterr().out

    checkpoint = str(base["checkpoint/b1"])
    assert main(["predict", "--checkpoint", checkpoint, "--manifest", manifest, "--split", "train_unlabeled",
                 "--out", str(tmp_path / "unl.csv")]) == EXIT_OK
    assert main(["pseudolabel", "--predictions", str(tmp_path / "unl.csv"), "--manifest", manifest,
                 "--threshold", "0.7", "--out-dir", str(tmp_path / "pl")]) == EXIT_OK
    assert (tmp_path / "pl" / "catalog_pseudo.csv").exists()
    # validation images are not eligible for pseudo-labels
    assert main(["pseudolabel", "--predictions", b1, "--manifest", manifest, "--threshold", "0",
                 "--out-dir", str(tmp_path / "pl2")]) == EXIT_DATA

    assert main(["masks", "--manifest", manifest, "--class", "both", "--out-dir", str(tmp_path / "masks")]) == EXIT_OK
    assert len(list(csv.DictReader((tmp_path / "masks" / "masks.csv").open()))) == 10
    assert main(["train-gan", "--masks", str(tmp_path / "masks" / "masks.csv"), "--manifest", manifest,
                 "--class", "both", "--set", "epochs_initial=1", "epochs_decay=1", "ngf=8", "ndf=8",
                 "n_downsampling=2", "n_blocks=1", "batch_size=5", "--out-dir", str(tmp_path / "gan")]) == EXIT_OK
    assert main(["masks", "--manifest", manifest, "--class", "none", "--out-dir", str(tmp_path / "m0")]) == EXIT_OK
    assert main(["synthesize", "--checkpoint", str(tmp_path / "gan" / "both" / "gan_epoch_2.ckpt"),
                 "--masks", str(tmp_path / "m0" / "masks.csv"), "--manifest", manifest,
                 "--out-dir", str(tmp_path / "syn")]) == EXIT_OK
    extended = load_manifest(tmp_path / "syn" / "catalog_extended.csv")
    synthetic = [r for r in extended if r.provenance.value == "synthetic"]
    assert len(synthetic) == 10 and all(extended.resolve(r).exists() for r in synthetic)

    image = str(config.manifest.parent / "images" / "validation" / "val_none_00.png")
    assert main(["explain", "--checkpoint", checkpoint, str(base["checkpoint/b2"]), "--image", image,
                 "--truth", "none", "--samples", "50", "--k", "3", "--out-dir", str(tmp_path / "xai")]) == EXIT_OK
    assert (tmp_path / "xai" / "val_none_00_explanation.png").exists()
    assert "ensemble" in (tmp_path / "xai" / "summary.txt").read_text()

    assert main(["train", "--manifest", manifest, "--preset", "b1", "--set", "backbone=tiny-cnn", "epochs_train=1",
                 "image_size=32", "batch_size=8", "mixed_precision=false", "--cv", "5", "--fold", "0",
                 "--out", str(tmp_path / "models")]) == EXIT_OK
    assert (tmp_path / "models" / "model" / "epoch_1.ckpt").exists()
    assert "held-out fold 0" in capsys.readouterr().out
    assert main(["report", str(config.output_dir)]) == EXIT_OK
