import json

import pytest

from motortemp import hypersearch
from motortemp.errors import ConfigError, DivergenceError
from motortemp.linear import LinearSpec
from motortemp.losses import LossSpec
from motortemp.neural import CnnSpec, MlpSpec
from motortemp.preprocess import PreprocessConfig
from motortemp.hypersearch import Leaderboard, SearchSpace, best_spec, config_hash, sample_config, search
from motortemp.training import TrainConfig, TrainHistory

SHORT = PreprocessConfig(spans=(2, 4, 8, 16, 32, 64, 128, 256))
SMALL = SearchSpace(mlp_neurons=(2, 6), cnn_filters=(2, 4), cnn_seq_lens=(12, 16))


class TestSpace:
    def test_table_configs_representable(self):
        space = SearchSpace()
        assert space.violations(LinearSpec(0.43, 0.99), LossSpec("squared")) == []
        assert space.violations(MlpSpec((90, 20), 0.1)) == []
        assert space.violations(CnnSpec((125, 5, 125), (2, 2, 2), (3, 1, 1), 100)) == []

    def test_violations_reported(self):
        space = SearchSpace()
        assert space.violations(LinearSpec(50.0, 0.5), LossSpec("absolute"))
        assert space.violations(MlpSpec((300, 20), 0.2))
        assert space.violations(CnnSpec((8, 8), (2, 2), (1, 1), 100))

    def test_bad_space(self):
        with pytest.raises(ConfigError):
            SearchSpace(mlp_neurons=(10, 5))
        with pytest.raises(ConfigError):
            SearchSpace(cnn_sizes=())

    def test_dict_round_trip(self):
        s = SearchSpace(penalty=(1e-3, 1.0))
        assert SearchSpace.from_dict(json.loads(json.dumps(s.to_dict()))) == s


class TestSample:
    @pytest.mark.parametrize("kind", ["linear", "mlp", "cnn"])
    def test_deterministic(self, kind):
        assert sample_config(SearchSpace(), kind, 42) == sample_config(SearchSpace(), kind, 42)

    @pytest.mark.parametrize("kind", ["linear", "mlp", "cnn"])
    def test_thousand_samples_in_domain(self, kind):
        space = SearchSpace()
        for seed in range(1000):
            spec, frag = sample_config(space, kind, seed)
            loss = LossSpec.from_dict(frag["loss"]) if "loss" in frag else None
            assert space.violations(spec, loss) == [], (seed, spec)

    def test_cnn_receptive_field(self):
        for seed in range(200):
            spec, _ = sample_config(SearchSpace(cnn_seq_lens=(25,)), "cnn", seed)
            assert spec.receptive_field <= spec.seq_len

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            sample_config(SearchSpace(), "svr", 0)

    def test_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": [2]}) == config_hash({"b": [2], "a": 1})


class TestSearch:
    def test_budget_one(self, tiny_dataset):
        board = search(SMALL, "linear", tiny_dataset, SHORT, TrainConfig(max_epochs=2), 1, 0)
        assert len(board.entries) + len(board.failed) == 1

    @pytest.mark.parametrize("kind", ["linear", "mlp", "cnn"])
    def test_ranked_and_deterministic(self, tiny_dataset, kind):
        cfg = TrainConfig(max_epochs=2, batch=32, chunk_len=8)
        a = search(SMALL, kind, tiny_dataset, SHORT, cfg, 4, 3)
        b = search(SMALL, kind, tiny_dataset, SHORT, cfg, 4, 3)
        assert a.to_json() == b.to_json()
        assert len(a.entries) + len(a.failed) == 4
        keys = [(e["mean_val_loss"], e["n_params"], e["config_hash"]) for e in a.entries]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)
        assert [e["rank"] for e in a.entries] == list(range(len(a.entries)))

    def test_parallel_matches_serial(self, tiny_dataset):
        cfg = TrainConfig(max_epochs=2)
        a = search(SMALL, "mlp", tiny_dataset, SHORT, cfg, 3, 5)
        b = search(SMALL, "mlp", tiny_dataset, SHORT, cfg, 3, 5, jobs=2)
        assert a.to_json() == b.to_json()

    def test_failed_candidate_isolated(self, tiny_dataset, monkeypatch):
        real = hypersearch.train
        calls = []

        def flaky(spec, split, dataset, pcfg, cfg):
            calls.append(spec)
            if len(calls) == 2:
                raise DivergenceError("training diverged (learning rate 1)", TrainHistory(stop_reason="divergence"))
            return real(spec, split, dataset, pcfg, cfg)

        monkeypatch.setattr(hypersearch, "train", flaky)
        board = search(SMALL, "linear", tiny_dataset, SHORT, TrainConfig(max_epochs=1), 3, 1)
        assert len(calls) == 3
        assert len(board.entries) == 2 and len(board.failed) == 1
        assert board.failed[0]["candidate"] == 1 and board.failed[0]["status"] == "failed"
        assert "DivergenceError" in board.failed[0]["error"]

    def test_all_diverging(self, tiny_dataset):
        board = search(SMALL, "mlp", tiny_dataset, SHORT, TrainConfig(lr=1e8, schedule="constant", max_epochs=3), 2, 0)
        assert board.entries == [] and len(board.failed) == 2
        assert board.best is None and best_spec(board) is None

    def test_best_spec_round_trip(self, tiny_dataset):
        board = search(SMALL, "cnn", tiny_dataset, SHORT, TrainConfig(max_epochs=1, chunk_len=8), 2, 7)
        spec, cfg, pcfg = best_spec(board)
        assert spec.to_dict() == board.best["config"]["model"]
        assert pcfg.seq_len == spec.seq_len
        assert isinstance(board, Leaderboard) and json.loads(board.to_json())["best"] == board.best

    def test_bad_budget(self, tiny_dataset):
        with pytest.raises(ConfigError):
            search(SMALL, "linear", tiny_dataset, SHORT, TrainConfig(), 0, 0)
