import pytest

from synthid.config import ExperimentConfig, TrainConfig, derive_seed, parse_kv_text
from synthid.errors import ConfigError


class TestSeeds:
    def test_stable_and_distinct(self):
        assert derive_seed(0, "teacher_init") == derive_seed(0, "teacher_init")
        seeds = {derive_seed(m, s, r) for m in (0, 1) for s in ("a", "b") for r in (0, 1)}
        assert len(seeds) == 8
        assert all(0 <= s < 2**64 for s in seeds)

    def test_known_value(self):
        import hashlib

        digest = hashlib.sha256(b"7:synthetic:0").digest()
        assert derive_seed(7, "synthetic") == int.from_bytes(digest[:8], "little")


class TestParsing:
    def test_comments_and_blanks(self):
        assert parse_kv_text("# c\n\n a = 1 \nb=x, y\n") == {"a": "1", "b": "x, y"}

    @pytest.mark.parametrize("text", ["novalue\n", "a = 1\na = 2\n", " = 3\n"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_kv_text(text)

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.subsets == (10, 20, 40, 60)
        assert cfg.alphas == (1e-5, 2e-5)
        assert [s.name for s in cfg.strategy_list()] == ["CLS", "KT", "CL(1e-05)", "CL(2e-05)"]
        opt = cfg.student_optimizer(0)
        assert (opt.learning_rate, opt.momentum, opt.weight_decay, opt.epochs, opt.milestones) == (0.1, 0.9, 5e-4, 64, (40, 48, 52))
        assert cfg.teacher_optimizer(0).milestones == (20, 28)

    def test_typed_values(self):
        cfg = ExperimentConfig.from_mapping({"subsets": "5, 10", "leakage": "0.25", "hidden_dims": "32, 16"})
        assert cfg.subsets == (5, 10) and cfg.leakage == 0.25 and cfg.hidden_dims == (32, 16)

    def test_round_trip(self):
        cfg = ExperimentConfig.from_mapping({"alphas": "0.001", "seed": "9"})
        assert ExperimentConfig.from_mapping(parse_kv_text(cfg.to_text())) == cfg

    @pytest.mark.parametrize(
        "values",
        [
            {"colour": "blue"},
            {"classes": "many"},
            {"subsets": "10, 80"},
            {"leakage": "1.5"},
            {"student_milestones": "70"},
            {"strategies": "CLS, SVM"},
            {"per_class": "2"},
        ],
    )
    def test_invalid(self, values):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(values)

    def test_train_config(self, tmp_path):
        (tmp_path / "t.cfg").write_text("epochs = 4\nmilestones = 2, 3\nseed = 5\n")
        cfg = TrainConfig.from_file(tmp_path / "t.cfg")
        assert cfg.optimizer().milestones == (2, 3)
        assert cfg.optimizer().seed == derive_seed(5, "student_train")
        with pytest.raises(ConfigError):
            TrainConfig.from_mapping({"leakage": "0.5"})
        with pytest.raises(ConfigError):
            TrainConfig.from_file(tmp_path / "missing.cfg")
