import os

import numpy as np
import pytest
import torch

from ssrl_depth.data import DataConfig, build_dataset

os.environ.setdefault("SSRL_DETERMINISTIC", "1")


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_data_config():
    return DataConfig(seed=3, height=16, width=32, n_train_source=8, n_train_target=8, n_val=2, n_test=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_data_config):
    root = tmp_path_factory.mktemp("tiny_data")
    return build_dataset(tiny_data_config, root)


def make_tiny_config(data_config, dtype="float32", epochs=(2, 2, 2), seed=0):
    from dataclasses import replace

    from ssrl_depth.pipeline.config import Config, NetConfig, SSRLConfig, StagesConfig

    nets = NetConfig(gen_channels=4, gen_res_blocks=1, disc_channels=4, enc_channels=(4, 6, 8, 8),
                     dec_channels=(8, 6, 6, 12), dtype=dtype)
    stages = StagesConfig(seed=seed, style_epochs=epochs[0], ssrl_epochs=epochs[1], depth_epochs=epochs[2],
                          style_batch=4, ssrl_batch=4, depth_batch=4)
    return replace(Config(), data=data_config, nets=nets, stages=stages, ssrl=SSRLConfig(block_size=(16, 16)))


@pytest.fixture
def tiny_config(tiny_data_config):
    return make_tiny_config(tiny_data_config)


@pytest.fixture(scope="session")
def tiny_train_data(tiny_dataset):
    from ssrl_depth.pipeline.stages import TrainData

    return TrainData.from_manifest(tiny_dataset)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
