"""Check the hand-written backward passes of the whole agent.

A short trajectory is recorded with sampled actions, then replayed with
fixed actions so the loss becomes a smooth function of the parameters.
Central differences are compared against the tape, tensor by tensor.

    python3 demos/gradients.py
"""

import numpy as np

from regretnav.agent import ModelConfig, init_params
from regretnav.autodiff import Tape, grad_check
from regretnav.env import DESK, generate_graph, make_episode
from regretnav.train import loss, replay_loss_fn, rollout

cfg = ModelConfig(embed_dim=12, hidden=16, proj_dim=24, max_steps=5)
params = init_params(cfg, np.random.default_rng(0))
rng = np.random.default_rng(1)
for _, t in params.items():
    t.value += 0.1 * rng.normal(size=t.shape)  # break the zero-initialized symmetry

episodes = [make_episode(generate_graph(s, gid=f"g{s}"), s) for s in range(3)]
_, results = rollout(params, episodes, mode="sample", rng=np.random.default_rng(2),
                     train=True, features=DESK)
f = replay_loss_fn(params, episodes, results)
report = grad_check(f, dict(params.items()), max_entries=20, rng=np.random.default_rng(3))
print(report)
print(f"worst relative error {report.max_error:.2e}\n")

# the action loss alone must not reach the progress head
params.zero_grad()
with Tape() as tape:
    buf, _ = rollout(params, episodes, mode="sample", rng=np.random.default_rng(4), train=True)
    total, parts = loss(buf, lam=1.0)
tape.backward(total)
for name in ("W_h", "W_pm", "W_a"):
    print(f"|grad {name}| = {np.abs(params[name].grad).max():.3e}")
