import pytest

from tdaug.augment import AugmentConfig, ConfigError
from tdaug.config import RunConfig, parse_config


def write(tmp_path, text):
    p = tmp_path / "run.yaml"
    p.write_text(text, encoding="utf-8")
    return p


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, ""))
    a = cfg.augment
    assert (a.rare_threshold, a.top_k, a.max_per_word) == (100, 1000, 500)
    assert (a.min_distance, a.max_passes, a.lm_floor) == (5, 20, 1e-4)
    assert cfg.lm.order == 4
    assert cfg.bpe.merges == 30000
    assert cfg.augment_config() == AugmentConfig()


def test_override_beats_file(tmp_path):
    cfg = parse_config(write(tmp_path, "augment:\n  top_k: 50\n"), ["augment.top_k=10"])
    assert cfg.augment.top_k == 10


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="augment.thresold"):
        parse_config(write(tmp_path, "augment:\n  thresold: 3\n"))
    with pytest.raises(ConfigError, match="thresold"):
        parse_config(None, ["thresold=3"])


@pytest.mark.parametrize("override", ["augment.top_k=0", "augment.lm_floor=1.5", "augment.mode=r2",
                                      "lm.order=6", "substitution_side=both", "augment.top_k=ten",
                                      "align.links=grow", "augment.min_distance=0"])
def test_invariant_violations(override):
    with pytest.raises(ConfigError):
        parse_config(None, [override])


def test_float_written_without_dot(tmp_path):
    cfg = parse_config(write(tmp_path, "augment:\n  lm_floor: 1e-3\n"))
    assert cfg.augment.lm_floor == 1e-3


def test_missing_input_file(tmp_path):
    with pytest.raises(ConfigError, match="data.source"):
        parse_config(write(tmp_path, "data:\n  source: nope.txt\n"))


def test_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "in.txt").write_text("a\n")
    cfg = parse_config(write(tmp_path, "data:\n  source: in.txt\n"))
    assert cfg.path(cfg.data.source) == tmp_path / "in.txt"


def test_fingerprint_ignores_output_dir():
    a, b = RunConfig(), RunConfig(output_dir="elsewhere")
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != RunConfig(seed=2).fingerprint()


def test_dump_round_trips(tmp_path):
    cfg = parse_config(None, ["augment.top_k=7", "seed=3"])
    again = parse_config(write(tmp_path, cfg.dump()))
    assert again.to_dict() == cfg.to_dict()
