import csv

import numpy as np
import pytest
from PIL import Image

from conftest import DATA, MNIST_DIR
from pager import archive
from pager.cli import EXIT_CONFIG, EXIT_DATA, EXIT_MODEL, build_parser, main, parse_attribute_query, parse_grid
from pager.errors import InvalidInputError

GOLDEN = str(DATA / "golden_tiny.pager")


def test_help_lists_defaults(capsys):
    for argv in (["--help"], ["train", "--help"], ["generate", "--help"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--threads", "--deterministic", "--core-gmm", "--dc-gmm", "--ac-gmm", "--lle-k",
                 "--resolution", "--grid", "--count"):
        assert flag in out
    for default in ("(default: 100)", "(default: 3)", "(default: 2)", "(default: 32)", "(default: 64)"):
        assert default in out


def test_train_defaults_mirror_celeba_preset():
    a = build_parser().parse_args(["train", "--data", "x"])
    assert (a.dataset, a.resolution, a.dc_gmm, a.ac_gmm, a.lle_k) == ("celeba", 32, 100, 3, 2)


def test_missing_data_is_config_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == EXIT_CONFIG
    assert "--data" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.pager"
    bad.write_bytes(b"PAGERMDL junk")
    assert main(["generate", "--model", str(bad), "--out", str(tmp_path)]) == EXIT_MODEL
    assert main(["generate", "--model", str(tmp_path / "none.pager")]) == EXIT_MODEL
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "m")]) == EXIT_DATA
    (tmp_path / "empty").mkdir()
    assert main(["train", "--dataset", "mnist", "--data", str(tmp_path / "empty")]) == EXIT_DATA
    assert main(["--threads", "0", "generate", "--model", GOLDEN]) == EXIT_CONFIG
    assert main(["generate", "--model", GOLDEN, "--count", "4", "--grid", "1x2",
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["generate", "--model", GOLDEN, "--attributes", "+smiling"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert sum(line.startswith("pager: ") for line in err.splitlines()) == 7


def test_superres_bad_side_lists_valid_sides(tmp_path, capsys):
    p = tmp_path / "in.png"
    Image.fromarray(np.zeros((5, 5, 3), np.uint8)).save(p)
    assert main(["superres", "--model", GOLDEN, "--in", str(p), "--target", "16"]) == EXIT_CONFIG
    assert "[4, 8, 16]" in capsys.readouterr().err


def test_superres_writes_target(tmp_path):
    p, out = tmp_path / "in.png", tmp_path / "out.png"
    Image.fromarray(np.full((4, 4, 3), 90, np.uint8)).save(p)
    assert main(["superres", "--model", GOLDEN, "--in", str(p), "--target", "16", "--out", str(out)]) == 0
    assert Image.open(out).size == (16, 16)
    # target equal to the input side is a copy
    same = tmp_path / "same.png"
    assert main(["superres", "--model", GOLDEN, "--in", str(p), "--target", "4", "--out", str(same)]) == 0
    assert np.array_equal(np.asarray(Image.open(same)), np.asarray(Image.open(p)))


def test_attribute_query_parsing():
    q = parse_attribute_query("+smiling,0hair,-male")
    # Male, Smiling, Blond_Hair, Black_Hair, Wearing_Lipstick, Bangs, Young
    assert q.tolist() == [-1, 1, 0, 0, 0, 0, 0]
    assert parse_attribute_query("+Blond_Hair, -gender, +YOUNG").tolist() == [-1, 0, 1, 0, 0, 0, 1]
    assert parse_attribute_query("+hair,0black").tolist() == [0, 0, 1, 0, 0, 0, 0]
    for bad in ("smiling", "+", "+wings", "*male"):
        with pytest.raises(InvalidInputError):
            parse_attribute_query(bad)


def test_parse_grid():
    assert parse_grid("8x8", 64) == (8, 8)
    assert parse_grid(None, 64) == (8, 8)
    assert parse_grid(None, 10) == (3, 4)
    assert parse_grid("2X5", 10) == (2, 5)
    for bad in ("8", "ax2", "0x4", "2x2"):
        with pytest.raises(InvalidInputError):
            parse_grid(bad, 5)


def _generate(tmp_path, name, *pre):
    out = tmp_path / name
    assert main([*pre, "generate", "--model", GOLDEN, "--seed", "7", "--count", "16", "--out", str(out)]) == 0
    return out


def test_generate_is_byte_reproducible(tmp_path):
    a = _generate(tmp_path, "a")
    b = _generate(tmp_path, "b", "--deterministic")
    files = sorted(p.name for p in a.iterdir())
    assert len(files) == 18 and files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_generate_grid_layout(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--model", GOLDEN, "--count", "64", "--grid", "8x8", "--grid-only",
                 "--out", str(out)]) == 0
    assert [p.name for p in out.iterdir() if p.suffix == ".png"] == ["grid.png"]
    # 8 tiles of 16 plus 9 one-pixel gutters
    assert Image.open(out / "grid.png").size == (8 * 16 + 9, 8 * 16 + 9)
    with open(out / "samples.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 64 and rows[0]["index"] == "0"


def test_samples_match_library(tmp_path):
    from pager.pipeline import generate
    out = _generate(tmp_path, "s")
    want = generate(archive.load(GOLDEN), 7, 16).images
    got = np.asarray(Image.open(out / "sample_00003.png"), np.float32) / 255
    assert np.abs(got - want[3]).max() <= 0.5 / 255 + 1e-6


@pytest.mark.skipif(not (MNIST_DIR / "t10k-images-idx3-ubyte").exists()
                    and not (MNIST_DIR / "t10k-images-idx3-ubyte.gz").exists(), reason="MNIST not available")
def test_train_and_eval_smoke(tmp_path):
    m = tmp_path / "m.pager"
    args = ["train", "--dataset", "mnist", "--data", str(MNIST_DIR), "--limit", "200", "--core-gmm", "5",
            "--dc-gmm", "5", "--em-iters", "10", "--max-windows", "2000", "--seed", "1", "--out", str(m)]
    assert main(args) == 0
    m2 = tmp_path / "m2.pager"
    assert main(args[:-1] + [str(m2)]) == 0
    assert m.read_bytes() == m2.read_bytes()
    rep = tmp_path / "r.csv"
    assert main(["eval", "--model", str(m), "--real", str(MNIST_DIR), "--count", "100", "--out", str(rep)]) == 0
    lines = rep.read_text().splitlines()
    assert lines[0] == "size,proxy_frechet,train_seconds,seed"
    size, dist, secs, seed = lines[1].split(",")
    assert size == "200" and float(dist) > 0 and secs == "" and seed == "0"
