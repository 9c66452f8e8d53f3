import csv
import hashlib

import numpy as np
import pytest
from PIL import Image

from texcamo import cli
from texcamo.config import ConfigError, RunConfig, load_config, parse_config_text
from texcamo.gradsuite import CheckResult

TINY = [
    "--set", "n_train=8",
    "--set", "n_test=3",
    "--set", "input_size=32",
    "--set", "stage_channels=4,8,8,8",
    "--set", "decoder_channels=8",
    "--set", "tarm_c1=3",
    "--set", "tarm_branches=2",
    "--set", "epochs=2",
    "--set", "batch_size=4",
    "--set", "affinity_grid=4",
]  # fmt: skip


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen", *TINY, "--out", str(root / "data")]) == 0
    assert cli.main(["train", *TINY, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


# ------------------------------------------------------------ config
def test_bundled_config_is_desk_scale():
    cfg = load_config()
    assert (cfg.epochs, cfg.batch_size) == (5, 8)
    assert (cfg.n_train, cfg.n_test, cfg.input_size) == (200, 50, 64)
    assert cfg.lambdas == (1.0, 1.0, 10.0)
    assert cfg.variant == "full"
    paper = RunConfig()
    assert (paper.epochs, paper.batch_size, paper.base_lr, paper.power) == (30, 16, 1e-3, 0.9)


def test_config_text_round_trip():
    cfg = load_config(overrides={"clip_norm": 2.5, "stage_channels": (4, 8), "num_tarm_levels": 1, "use_bcl": False})
    assert RunConfig(**parse_config_text(cfg.to_text())) == cfg


def test_config_parsing_rules():
    got = parse_config_text("# c\nseed = 3  # trailing\nuse_rrb = no\nclip_norm = none\nlambdas = 1, 0.5, 2\n")
    assert got == {"seed": 3, "use_rrb": False, "clip_norm": None, "lambdas": (1.0, 0.5, 2.0)}
    for bad in ("seed 3", "seed = x", "nope = 1", "use_rrb = maybe"):
        with pytest.raises(ConfigError, match="<config>:1"):
            parse_config_text(bad)
    with pytest.raises(ConfigError):
        RunConfig(lambdas=(1.0, 1.0))
    with pytest.raises(ConfigError):
        RunConfig(difficulty_range=(0.8, 0.2))


def test_config_file_then_set_then_flags(tmp_path, capsys):
    path = tmp_path / "a.cfg"
    path.write_text("seed = 4\nuse_bcl = true\nepochs = 7\n")
    args = cli.build_parser().parse_args(["train", "--config", str(path), "--set", "seed=5", "--set", "epochs=2", "--seed", "6", "--no-bcl"])
    cfg = cli.resolve_config(args)
    assert (cfg.seed, cfg.epochs, cfg.use_bcl) == (6, 2, False)
    assert cfg.batch_size == RunConfig().batch_size  # an explicit file replaces the bundled one


@pytest.mark.parametrize(
    "flags, variant",
    [([], "full"), (["--no-bcl"], "M3"), (["--no-tarm", "--no-bcl"], "M2"), (["--no-rrb", "--no-tarm", "--no-bcl"], "M1")],
)
def test_ablation_flags_select_variant(flags, variant):
    cfg = cli.resolve_config(cli.build_parser().parse_args(["train", *flags]))
    assert cfg.variant == variant
    assert cfg.loss().use_bcl == (variant == "full")


# ------------------------------------------------------------ usage errors
@pytest.mark.parametrize(
    "argv",
    [[], ["bogus"], ["gen", "--set", "seed"], ["gen", "--set", "nope=1"], ["gen", "--set", "epochs=zero"], ["infer", "only-one"]],
)
def test_usage_errors_exit_1(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        code = cli.main(argv)
        raise SystemExit(code)
    assert exc.value.code == cli.EXIT_USAGE


# ------------------------------------------------------------ gen
def test_gen_defaults_prints_manifest_and_refuses_rerun(tmp_path, capsys):
    out = tmp_path / "d"
    code, stdout, _ = run(capsys, "gen", "--out", str(out))
    assert code == 0 and stdout.strip() == str(out / "manifest.txt")
    assert len(list((out / "train" / "images").iterdir())) == 200
    assert len(list((out / "test" / "masks").iterdir())) == 50
    assert Image.open(out / "train" / "images" / "00000.png").size == (64, 64)
    before = digest(out / "manifest.txt")
    code, _, err = run(capsys, "gen", "--out", str(out))
    assert code == cli.EXIT_DATA and "--force" in err
    assert digest(out / "manifest.txt") == before


def test_gen_seed_changes_every_file_and_force_replaces(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "gen", *TINY, "--out", str(a))[0] == 0
    assert run(capsys, "gen", *TINY, "--out", str(b), "--seed", "1")[0] == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*.png"))
    assert files == sorted(p.relative_to(b) for p in b.rglob("*.png"))
    assert all(digest(a / f) != digest(b / f) for f in files)
    # a smaller forced rerun must not leave stale samples behind
    assert run(capsys, "gen", *TINY, "--set", "n_train=2", "--out", str(a), "--seed", "1", "--force")[0] == 0
    assert len(list((a / "train" / "images").iterdir())) == 2
    assert digest(a / "train" / "images" / "00000.png") == digest(b / "train" / "images" / "00000.png")


# ------------------------------------------------------------ train
def test_train_writes_per_epoch_and_final_checkpoints(tiny):
    run_dir = tiny / "run"
    names = {p.name for p in run_dir.iterdir()}
    assert {"epoch_000.ckpt", "epoch_001.ckpt", "epoch_002.ckpt", "final.ckpt", "run.cfg", "train.log", "manifest.txt"} <= names
    assert digest(run_dir / "final.ckpt") == digest(run_dir / "epoch_002.ckpt")
    manifest = (run_dir / "manifest.txt").read_text()
    assert "variant full" in manifest and "seed 0" in manifest and "iterations 4" in manifest
    log = (run_dir / "train.log").read_text().splitlines()
    assert sum(line.startswith("step=") for line in log) == 4
    assert RunConfig(**parse_config_text((run_dir / "run.cfg").read_text())).epochs == 2


def test_train_is_byte_deterministic(tiny, tmp_path, capsys):
    code, _, _ = run(capsys, "train", *TINY, "--data", str(tiny / "data"), "--out", str(tmp_path / "again"))
    assert code == 0
    for name in ("final.ckpt", "epoch_001.ckpt", "train.log", "manifest.txt", "run.cfg"):
        a, b = (tiny / "run" / name).read_text(errors="replace"), (tmp_path / "again" / name).read_text(errors="replace")
        if name == "run.cfg":  # output_dir differs by construction
            a, b = ([l for l in x.splitlines() if not l.startswith("output_dir")] for x in (a, b))
        assert a == b, name
    assert digest(tiny / "run" / "final.ckpt") == digest(tmp_path / "again" / "final.ckpt")


def test_train_seed_changes_weights(tiny, tmp_path, capsys):
    assert run(capsys, "train", *TINY, "--set", "epochs=1", "--data", str(tiny / "data"), "--out", str(tmp_path / "s1"), "--seed", "1")[0] == 0
    assert digest(tmp_path / "s1" / "epoch_000.ckpt") != digest(tiny / "run" / "epoch_000.ckpt")


def test_train_refuses_existing_run_without_force(tiny, capsys):
    before = digest(tiny / "run" / "final.ckpt")
    code, _, err = run(capsys, "train", *TINY, "--data", str(tiny / "data"), "--out", str(tiny / "run"))
    assert code == cli.EXIT_DATA and "--force" in err
    assert digest(tiny / "run" / "final.ckpt") == before


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_non_finite_aborts_with_exit_3_and_keeps_last_good(tiny, tmp_path, capsys):
    out = tmp_path / "blowup"
    code, _, err = run(capsys, "train", *TINY, "--set", "base_lr=1e12", "--data", str(tiny / "data"), "--out", str(out))
    assert code == cli.EXIT_NUMERICAL
    assert "non-finite" in err
    assert not (out / "final.ckpt").exists()
    assert (out / "epoch_000.ckpt").exists()
    assert "error" in (out / "manifest.txt").read_text()


def test_train_missing_dataset_is_data_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", *TINY, "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r"))
    assert code == cli.EXIT_DATA and str(tmp_path / "none") in err


def test_hflip_changes_training(tiny, tmp_path, capsys):
    out = tmp_path / "flip"
    assert run(capsys, "train", *TINY, "--set", "hflip=true", "--data", str(tiny / "data"), "--out", str(out))[0] == 0
    assert digest(out / "epoch_000.ckpt") == digest(tiny / "run" / "epoch_000.ckpt")
    assert digest(out / "final.ckpt") != digest(tiny / "run" / "final.ckpt")


# ------------------------------------------------------------ infer
def test_infer_size_range_and_repeatability(tiny, tmp_path, capsys):
    src = tmp_path / "odd.png"
    rng = np.random.default_rng(0)
    Image.fromarray((rng.random((45, 70, 3)) * 255).astype(np.uint8)).save(src)
    outs = [tmp_path / "m1.png", tmp_path / "m2.png"]
    for o in outs:
        code, stdout, _ = run(capsys, "infer", str(tiny / "run" / "final.ckpt"), str(src), str(o))
        assert code == 0 and stdout.strip() == str(o)
    im = Image.open(outs[0])
    assert im.mode == "L" and im.size == (70, 45)
    a = np.asarray(im)
    assert a.dtype == np.uint8 and 0 <= a.min() and a.max() <= 255
    assert digest(outs[0]) == digest(outs[1])


def test_infer_unreadable_image_names_path(tiny, tmp_path, capsys):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not a png")
    code, _, err = run(capsys, "infer", str(tiny / "run" / "final.ckpt"), str(bad), str(tmp_path / "o.png"))
    assert code == cli.EXIT_DATA and str(bad) in err


def test_infer_bad_checkpoint_is_data_error(tiny, tmp_path, capsys):
    ck = tmp_path / "x.ckpt"
    ck.write_bytes(b"garbage")
    (tmp_path / "run.cfg").write_text((tiny / "run" / "run.cfg").read_text())
    code, _, _ = run(capsys, "infer", str(ck), str(tiny / "data" / "test" / "images" / "00000.png"), str(tmp_path / "o.png"))
    assert code == cli.EXIT_DATA


# ------------------------------------------------------------ eval / score
def test_eval_prints_table_row_and_writes_reports(tiny, tmp_path, capsys):
    out = tmp_path / "ev"
    code, stdout, _ = run(capsys, "eval", str(tiny / "run" / "final.ckpt"), "--data", str(tiny / "data"), "--out", str(out), "-v")
    assert code == 0
    header, row = stdout.splitlines()[:2]
    assert header.split()[1:] == ["S_alpha↑", "E_phi↑", "F_beta^w↑", "M↓"]
    assert row.split()[0] == "full"
    assert len(stdout.splitlines()) == 2 + 3 + 1  # header, mean, 3 images, report path
    assert len(list((out / "pred").iterdir())) == 3
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["image", "S_alpha", "E_phi", "F_beta_w", "MAE"]
    assert rows[-1][0] == "mean" and len(rows) == 5
    # eval is inference followed by scoring the written maps
    again = cli.cmd_score(str(out / "pred"), str(tiny / "data" / "test" / "masks"), out=str(tmp_path / "sc"))
    assert [f"{v:.10f}" for v in again.values()] == rows[-1][1:]


def test_eval_report_is_deterministic(tiny, tmp_path, capsys):
    for d in ("e1", "e2"):
        assert run(capsys, "eval", str(tiny / "run" / "final.ckpt"), "--data", str(tiny / "data"), "--out", str(tmp_path / d))[0] == 0
    assert digest(tmp_path / "e1" / "metrics.csv") == digest(tmp_path / "e2" / "metrics.csv")


def test_score_ground_truth_against_itself(tiny, tmp_path, capsys):
    masks = tiny / "data" / "test" / "masks"
    code, stdout, _ = run(capsys, "score", str(masks), str(masks), "--out", str(tmp_path))
    assert code == 0
    assert stdout.splitlines()[1].split()[1:] == ["1.0000", "1.0000", "1.0000", "0.0000"]
    report = cli.cmd_score(str(masks), str(masks), out=str(tmp_path))
    assert report.values() == (1.0, 1.0, 1.0, 0.0)


def test_score_missing_prediction_is_data_error(tiny, tmp_path, capsys):
    (tmp_path / "p").mkdir()
    code, _, err = run(capsys, "score", str(tmp_path / "p"), str(tiny / "data" / "test" / "masks"))
    assert code == cli.EXIT_DATA and "00000" in err


# ------------------------------------------------------------ gradcheck
def test_gradcheck_exit_code_follows_tolerance(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_suite", lambda seed, log: [CheckResult("a", 3e-9, 4, 0.0), CheckResult("micro_tanet", 2e-5, 9, 1.0)])
    code, stdout, _ = run(capsys, "gradcheck")
    assert code == 0 and "max relative error 2.000e-05" in stdout
    monkeypatch.setattr(cli, "run_suite", lambda seed, log: [CheckResult("micro_tanet", 5e-4, 9, 1.0)])
    assert run(capsys, "gradcheck")[0] == cli.EXIT_NUMERICAL
    monkeypatch.setattr(cli, "run_suite", lambda seed, log: [CheckResult("micro_tanet", float("nan"), 9, 1.0)])
    assert run(capsys, "gradcheck")[0] == cli.EXIT_NUMERICAL
