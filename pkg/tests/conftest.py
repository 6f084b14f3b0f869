import pytest

from cinearm.policy import PolicyConfig, init_params
from cinearm.training import TrainConfig, save_checkpoint


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory):
    """Small random-init checkpoint for service/deployment plumbing tests."""
    cfg = PolicyConfig(d_model=16, n_heads=2, enc_layers=1, dec_layers=1,
                       d_z=2, ffn_mult=2, cvae_hidden=12)
    params = init_params(cfg, seed=0)
    path = tmp_path_factory.mktemp("ckpt") / "toy.ckpt"
    save_checkpoint(params, TrainConfig(), path)
    return path
