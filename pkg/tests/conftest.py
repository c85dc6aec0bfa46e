import numpy as np
import pytest

from regretnav.agent import ModelConfig, init_params
from regretnav.env import FeatureConfig, GraphParams, generate_graph, make_episode

TINY_FEATURES = FeatureConfig(d_app=8, orient_tile=2)
TINY_GRAPH = GraphParams(d_app=8, rows=(4, 5), cols=(4, 5))


def tiny_config(**kw):
    base = dict(embed_dim=8, hidden=8, feature_dim=TINY_FEATURES.dim, proj_dim=12, marker_tile=3,
                max_instruction_len=40, dropout=0.0, max_steps=6)
    base.update(kw)
    return ModelConfig(**base)


def tiny_episodes(n=3, seed=0):
    out = []
    for i in range(n):
        g = generate_graph(seed * 100 + i, TINY_GRAPH, gid=f"tiny{seed}_{i}")
        out.append(make_episode(g, i, min_edges=2, max_edges=4))
    return out


def randomize(params, rng, scale=0.5):
    """Perturb every tensor so no path is trivially zero."""
    for name, t in params.items():
        if name.endswith("gamma"):
            t.value[...] = 1.0 + 0.2 * rng.normal(size=t.shape)
        else:
            t.value[...] = scale * rng.normal(size=t.shape)
    return params


@pytest.fixture
def tiny_world():
    cfg = tiny_config()
    params = randomize(init_params(cfg, np.random.default_rng(0)), np.random.default_rng(1))
    return cfg, params, tiny_episodes()


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
