import pytest

from leafgrasp.config import ConfigError, RunConfig, apply_override, load_config
from clirun import SMALL, full_session, run


@pytest.fixture(scope="module")
def sessions(tmp_path_factory):
    a = full_session(tmp_path_factory.mktemp("a"))
    b = full_session(tmp_path_factory.mktemp("b"))
    return a, b


# --- config -----------------------------------------------------------------


def test_defaults_and_aliases():
    cfg = load_config(overrides=["fusion.cap=0.1", "grasp.weights.approach=0.5", "train.lr=0.001"])
    assert cfg.pipeline.fusion.cap == 0.1
    assert cfg.pipeline.grasp.weights.approach == 0.5
    assert cfg.train.lr == 0.001
    assert RunConfig().pipeline.fusion.cap == 0.3


def test_tuple_and_bool_coercion():
    cfg = load_config(overrides=["synth.leaf_size=10,20", "grasp.stem_heuristic=true", "fusion.fixed_weight=0.3"])
    assert cfg.synth.leaf_size == (10.0, 20.0)
    assert cfg.pipeline.grasp.stem_heuristic is True
    assert cfg.pipeline.fusion.fixed_weight == 0.3


def test_file_then_command_line_precedence(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = 4\n[fusion]\ncap = 0.2\n[synth]\nwidth = 320\n")
    cfg = load_config(p, ["fusion.cap=0.25"])
    assert (cfg.seed, cfg.pipeline.fusion.cap, cfg.synth.width) == (4, 0.25, 320)
    assert load_config(p, seed=9).seed == 9


@pytest.mark.parametrize("bad", ["fusion.nope=1", "fusion=1", "train.batch_size=abc", "fusion.cap", "fusion.cap=2"])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        load_config(overrides=[bad])


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[fusion\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_fingerprint_tracks_changes():
    a = RunConfig()
    assert a.fingerprint() == RunConfig().fingerprint()
    assert apply_override(a, "fusion.cap", "0.2").fingerprint() != a.fingerprint()


# --- CLI --------------------------------------------------------------------


def test_every_subcommand_succeeds(sessions):
    a, _ = sessions
    for name, (code, _, _) in a.items():
        assert code == 0, name
    assert "weights.bin" in a["train"][2]
    assert "selections.tsv" in a["select"][2]
    assert any(k.endswith(".overlay.ppm") for k in a["select"][2])
    assert any(k.endswith(".features.tsv") for k in a["select"][2])
    assert "ablation.tsv" in a["ablate"][2]


def test_every_subcommand_is_byte_reproducible(sessions):
    a, b = sessions
    for name in a:
        assert a[name][1] == b[name][1], name
        assert a[name][2] == b[name][2], name


def test_gen_data_ratio(sessions):
    a, _ = sessions
    words = a["gen-data"][1].split()
    orig, aug, neg = int(words[1]), int(words[3]), int(words[5])
    assert aug == 3 * orig and neg == 3 * orig


def test_cap_zero_matches_geometric_only(tmp_path, sessions):
    a, _ = sessions
    (tmp_path / "corpus").mkdir()
    for k, v in a["gen"][2].items():
        p = tmp_path / "corpus" / k
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(v)
    (tmp_path / "w.bin").write_bytes(a["train"][2]["weights.bin"])
    c1, geo, _ = run(["select", "--scenes", tmp_path / "corpus", "--out", tmp_path / "g", "--geometric-only"])
    c2, cap0, _ = run(["select", "--scenes", tmp_path / "corpus", "--out", tmp_path / "c",
                       "--model", tmp_path / "w.bin", "--cap", "0"])
    assert c1 == c2 == 0

    def picks(text):
        return [tuple(line.split("\t")[:4]) for line in text.splitlines()[1:]]

    assert picks(geo) == picks(cap0)


def test_exit_codes(tmp_path):
    assert run(["bogus"])[0] == 1
    assert run(["select", "--scenes", tmp_path, "--out", tmp_path / "o", "--cap", "2"])[0] == 1
    assert run(["gen", "--out", tmp_path / "o", "--set", "fusion.nope=1"])[0] == 1
    assert run(["select", "--scenes", tmp_path / "missing", "--out", tmp_path / "o"])[0] == 2
    (tmp_path / "junk.bin").write_bytes(b"junk" * 20)
    assert run(["inspect", tmp_path / "junk.bin"])[0] == 2
    assert run(["ablate", "--scenes", tmp_path, "--out", tmp_path / "o", "--leaf-features", "colour"])[0] == 1
    assert run(["--help"])[0] == 0


def test_empty_dataset_is_a_data_error(tmp_path):
    code, _, err = run(["gen", "--count", "1", "--out", tmp_path / "c", *SMALL, "--set", "synth.leaf_count=1,1"])
    assert code == 0
    (tmp_path / "d").mkdir()
    assert run(["train", "--data", tmp_path / "d", "--out", tmp_path / "m"])[0] == 2
