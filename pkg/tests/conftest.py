import numpy as np
import pytest

from cgtp import model, scene, training


@pytest.fixture(scope="session")
def tiny_cfg():
    return model.ModelConfig(context_slots=4, max_lanes=2, goals_per_lane=20,
                             top_k=2)


@pytest.fixture()
def tiny_store(tiny_cfg):
    return model.init_parameters(tiny_cfg, seed=0)


@pytest.fixture(scope="session")
def tiny_scenario():
    return scene.generate_synthetic_scenario("cut_in", 3, horizon=10)


@pytest.fixture(scope="session")
def tiny_preps(tiny_cfg):
    scens = [scene.generate_synthetic_scenario(k, 1, horizon=10)
             for k in ("cut_in", "left_turn")]
    return [training.preprocess(tiny_cfg, s) for s in scens]
