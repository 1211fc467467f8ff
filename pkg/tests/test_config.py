import pytest

from stagewise.config import ConfigError, ExperimentConfig, load_config, log_grid


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


class TestLoadConfig:
    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("STAGEWISE_OUT", raising=False)
        cfg = load_config()
        assert cfg == ExperimentConfig()
        assert cfg.sgld.inv_temp == 1000.0 and cfg.train.epochs == 10_000

    def test_sections(self, tmp_path):
        p = write(
            tmp_path,
            "[train]\nepochs = 300\nlr = 0.01\n[sgld]\nchains = 2\n[experiment]\npairs = dog:cat, rose:pine\n"
            "methods = bif, loo\nseed = 4\n[sweep]\nstep = 1e-6, 1e-4, 2\n",
        )
        cfg = load_config(p)
        assert cfg.train.epochs == 300 and cfg.train.lr == 0.01
        assert cfg.sgld.chains == 2
        assert cfg.pairs == (("dog", "cat"), ("rose", "pine"))
        assert cfg.methods == ("bif", "loo")
        # the experiment seed propagates to training and sampling
        assert cfg.train.seed == 4 and cfg.sgld.seed == 4
        assert cfg.sweep_step == (1e-6, 1e-4, 2)

    def test_n_inv_temp(self, tmp_path):
        cfg = load_config(write(tmp_path, "[sgld]\nn_inv_temp = 80\n"))
        assert cfg.sgld.inv_temp == 10.0

    @pytest.mark.parametrize(
        "text",
        [
            "[train]\nsteps = 3\n",
            "[bogus]\nx = 1\n",
            "[train]\nepochs = many\n",
            "[dataset]\ndepth = 11\n",
            "[classical]\nkind = hessian\ngamma_rel = 0\n",
            "[analytic]\nepsilon = 0.7\n",
            "[experiment]\nmethods = bif, tracin\n",
            "[experiment]\npairs = dog-cat\n",
            "[sweep]\nstep = 1e-3, 1e-2\n",
            "[sgld]\nbatch = 9\n",
            "[sgld]\ndecay = 1.5\n",
        ],
    )
    def test_rejects(self, tmp_path, text):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "nope.ini")

    def test_env_and_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STAGEWISE_OUT", str(tmp_path / "env"))
        assert load_config().output_dir == str(tmp_path / "env")
        assert load_config(overrides={"output_dir": "x"}).output_dir == "x"
        assert load_config(overrides={"seed": 9}).train.seed == 9


class TestGrid:
    def test_log_grid(self):
        assert log_grid(1e-2, 1e2, 5) == pytest.approx([1e-2, 1e-1, 1.0, 1e1, 1e2])
        assert log_grid(3.0, 7.0, 1) == [3.0]

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            log_grid(0.0, 1.0, 3)
        with pytest.raises(ConfigError):
            log_grid(1.0, 2.0, 0)

    def test_sweep_grid_size(self):
        assert len(ExperimentConfig().sweep_grid) == 27
