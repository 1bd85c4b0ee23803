import json

import numpy as np
import pytest

from vpet.cli import EXIT_DATA, EXIT_MODEL, EXIT_OK, EXIT_USAGE, main
from vpet.geometry import RigidTransform, read_obj
from vpet.skeleton import load_skeleton, pose_mesh

TINY = ["--set", "embed=8", "--set", "hidden=8", "--set", "latent_traj=4", "--set", "latent_artic=4",
        "--set", "n_fg=32", "--set", "n_bg=64", "--set", "batch=4", "--set", "checkpoint_every=0"]


def synth(out, records=4, seed=0):
    return main(["synth", "--records", str(records), "--scenes", "2", "--frames", "6", "--n-bg", "256",
                 "--n-fg", "64", "--seed", str(seed), "--out", str(out)])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert synth(out) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--data", str(dataset / "dataset.jsonl"), "--out", str(out),
                 *TINY, "--set", "epochs=3", "--lambda-cdd", "0.25"])
    assert code == EXIT_OK
    return out


def test_synth_manifest_lists_every_file(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    on_disk = {p.relative_to(dataset).as_posix() for p in dataset.rglob("*") if p.is_file()}
    assert set(manifest) == on_disk - {"manifest.json"}
    stats = json.loads((dataset / "stats.json").read_text())
    assert stats["clips"] == 4
    assert len((dataset / "dataset.jsonl").read_text().splitlines()) == 4


def test_synth_same_seed_same_checksums(tmp_path, dataset):
    assert synth(tmp_path / "again") == EXIT_OK
    a = json.loads((dataset / "manifest.json").read_text())
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert {k: v["sha256"] for k, v in a.items()} == {k: v["sha256"] for k, v in b.items()}


def test_synth_zero_records_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--records", "0", "--out", str(tmp_path)])
    assert exc.value.code == EXIT_USAGE


def test_train_writes_csv_and_echo(trained):
    rows = (trained / "loss.csv").read_text().splitlines()
    assert len(rows) == 1 + 3
    echo = json.loads((trained / "train_config.json").read_text())
    assert echo["train_config"]["lambda_cdd"] == 0.25
    assert echo["train_config"]["embed"] == 8
    assert (trained / "final.vpet").exists()


def test_train_fifty_epochs_fifty_rows(tmp_path, dataset):
    code = main(["train", "--data", str(dataset / "dataset.jsonl"), "--out", str(tmp_path), *TINY,
                 "--set", "epochs=50"])
    assert code == EXIT_OK
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 1 + 50


def test_train_resume_continues_step_counter(tmp_path, dataset, trained, capsys):
    code = main(["train", "--data", str(dataset / "dataset.jsonl"), "--out", str(tmp_path), *TINY,
                 "--set", "epochs=5", "--resume", str(trained / "final.vpet")])
    assert code == EXIT_OK
    assert "trained 5 steps over 5 epochs" in capsys.readouterr().out


def test_train_errors(tmp_path, dataset):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema": "nope"}\n')
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["train", "--data", str(dataset / "dataset.jsonl"), "--out", str(tmp_path / "o"),
                 "--set", "bogus=1"]) == EXIT_USAGE
    assert main(["train", "--data", str(dataset / "dataset.jsonl"), "--out", str(tmp_path / "o"),
                 "--set", "novalue"]) == EXIT_USAGE


def _generate(dataset, trained, out, seed=0, frames=5, start="1 0 0 0 0.2 0.3 0.1"):
    return main(["generate", "--ckpt", str(trained / "final.vpet"), "--fg", str(dataset / "quadruped.obj"),
                 "--skel", str(dataset / "skeleton.json"), "--bg", str(dataset / "scenes" / "scene_0000.obj"),
                 "--start", start, "--frames", str(frames), "--seed", str(seed), "--out", str(out)])


def test_generate_outputs(tmp_path, dataset, trained):
    assert _generate(dataset, trained, tmp_path) == EXIT_OK
    motion = json.loads((tmp_path / "motion.json").read_text())
    assert np.shape(motion["G"]) == (6, 7) and len(motion["A"]) == 6
    assert len(list((tmp_path / "frames").glob("*.obj"))) == 6
    anim = json.loads((tmp_path / "animation.json").read_text())
    assert len(anim["frames"]) == 6
    assert motion["room_scale"] > 0
    # frame 0 is the fg posed at the pinned start
    fg = read_obj(dataset / "quadruped.obj")
    skel = load_skeleton(dataset / "skeleton.json")
    g0 = RigidTransform.from_vec7(motion["G"][0])
    ref = pose_mesh(fg, skel, np.asarray(motion["A"][0]), g0)
    np.testing.assert_allclose(read_obj(tmp_path / "frames" / "frame_0000.obj").vertices, ref.vertices, atol=1e-6)


def test_generate_seeds_differ(tmp_path, dataset, trained):
    assert _generate(dataset, trained, tmp_path / "a", seed=1) == EXIT_OK
    assert _generate(dataset, trained, tmp_path / "b", seed=2) == EXIT_OK
    a = json.loads((tmp_path / "a" / "motion.json").read_text())
    b = json.loads((tmp_path / "b" / "motion.json").read_text())
    assert a["G"] != b["G"]


def test_generate_errors(tmp_path, dataset, trained):
    assert _generate(dataset, trained, tmp_path / "x", start="1 0 0") == EXIT_USAGE
    assert _generate(dataset, trained, tmp_path / "x", frames=0) == EXIT_USAGE
    skel = json.loads((dataset / "skeleton.json").read_text())
    other = tmp_path / "skel.json"
    skel_small = dict(skel)
    for key, value in skel.items():
        if isinstance(value, list) and len(value) == len(skel.get("parents", [])):
            skel_small[key] = value[:-1]
    other.write_text(json.dumps(skel_small))
    code = main(["generate", "--ckpt", str(trained / "final.vpet"), "--fg", str(dataset / "quadruped.obj"),
                 "--skel", str(other), "--bg", str(dataset / "scenes" / "scene_0000.obj"),
                 "--start", "1 0 0 0 0 0 0", "--out", str(tmp_path / "y")])
    assert code == EXIT_MODEL
    (tmp_path / "junk.vpet").write_bytes(b"nope")
    code = main(["generate", "--ckpt", str(tmp_path / "junk.vpet"), "--fg", str(dataset / "quadruped.obj"),
                 "--skel", str(dataset / "skeleton.json"), "--bg", str(dataset / "scenes" / "scene_0000.obj"),
                 "--start", "1 0 0 0 0 0 0", "--out", str(tmp_path / "z")])
    assert code == EXIT_MODEL


def test_eval_oracle_copy(tmp_path, dataset):
    data = str(dataset / "dataset.jsonl")
    assert main(["eval", "--oracle-copy", "--data", data, "--n", "2", "--out", str(tmp_path / "a"),
                 "--include-jumps"]) == EXIT_OK
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["recon"] == 0.0
    assert {"recon", "diversity", "floating_err"} <= set(rep)
    assert (tmp_path / "a" / "report.csv").exists()


def test_eval_deterministic(tmp_path, dataset, trained):
    args = ["eval", "--ckpt", str(trained / "final.vpet"), "--data", str(dataset / "dataset.jsonl"),
            "--n", "2", "--seed", "3", "--include-jumps"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_eval_errors(tmp_path, dataset):
    data = str(dataset / "dataset.jsonl")
    assert main(["eval", "--data", data, "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["eval", "--oracle-copy", "--data", data, "--n", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    assert main(["eval", "--oracle-copy", "--data", str(bad), "--out", str(tmp_path)]) == EXIT_DATA
