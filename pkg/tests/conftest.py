import numpy as np
import pytest

from config import RunConfig, build_run_config
from gmm import GmmConfig
from phenotype import LinearEmbedder, SynthGenerator, build_style_model, sample_embeddings

# small enough that a whole fit/evolve/export cycle runs in a second or two
SMALL_CONFIG = {
    "seed": 3,
    "generator": {"seed": 11, "latent_dim": 6, "hidden_width": 8, "height": 4, "width": 4},
    "embedder": {"seed": 12, "dim": 10},
    "dataset_size": 300,
    "pca_target_ratio": 0.9,
    "gmm": {"n_components": 5, "max_iters": 100, "n_init": 2},
    "evolution": {"pop_size": 20, "n_generations": 8, "n_elite": 1, "n_new": 3, "tournament_size": 3},
    "target_count": 5,
    "export_count": 3,
    "sweep": {
        "p_cx": [0.7, 0.9],
        "p_mut": [0.2, 0.5],
        "pop_size": [12, 16],
        "tournament_size": [3, 6],
        "runs": 1,
    },
}

SMALL_CONFIG_TEXT = """\
# test configuration
seed = 3
generator.seed = 11
generator.latent_dim = 6
generator.hidden_width = 8
generator.height = 4
generator.width = 4
embedder.seed = 12
embedder.dim = 10
dataset_size = 300
pca_target_ratio = 0.9
gmm.n_components = 5
gmm.max_iters = 100
gmm.n_init = 2
evolution.pop_size = 20
evolution.n_generations = 8
evolution.n_new = 3
evolution.tournament_size = 3
targets = auto
target_count = 5
export_count = 3
sweep.p_cx = 0.7, 0.9
sweep.p_mut = 0.2, 0.5
sweep.pop_size = 12, 16
sweep.tournament_size = 3, 6
sweep.runs = 1
"""


@pytest.fixture
def small_config(tmp_path) -> RunConfig:
    values = dict(SMALL_CONFIG, output_dir=tmp_path / "out")
    return build_run_config(values)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text(SMALL_CONFIG_TEXT + f"output_dir = {tmp_path / 'cli_out'}\n", encoding="utf-8")
    return path


@pytest.fixture
def generator() -> SynthGenerator:
    return SynthGenerator(seed=5, latent_dim=4, hidden_width=6, height=3, width=5)


@pytest.fixture
def embedder() -> LinearEmbedder:
    return LinearEmbedder(seed=6, dim=7, height=3, width=5)


@pytest.fixture
def style_setup(generator, embedder):
    """A fitted 3-style model over the small generator, plus its training set."""
    rng = np.random.default_rng(0)
    latents, embeddings = sample_embeddings(generator, embedder, 400, rng)
    style_model = build_style_model(embeddings, 0.95, GmmConfig(n_components=3, seed=1))
    return style_model, latents, embeddings
