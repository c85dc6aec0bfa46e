"""Follow one untrained agent through a generated building, step by step.

Prints what the agent sees and how it decides: the progress estimate, the
forward/rollback mixing weights, the marker differences of each candidate
and whether a move went back.

    python3 demos/walkthrough.py
"""

import numpy as np

from regretnav.agent import ModelConfig, init_params
from regretnav.env import DESK, VOCAB, generate_graph, make_episode, shortest_path
from regretnav.train import rollout

graph = generate_graph(seed=11, gid="demo")
episode = make_episode(graph, seed=3)
print(f"graph: {graph.n} viewpoints, branching {graph.branching_factor():.2f}")
path, metres = shortest_path(graph, episode.start, episode.goal)
print(f"start {episode.start} -> goal {episode.goal}, expert path {path} ({metres:.1f} m)")
words = {i: w for w, i in VOCAB.items()}
print("instruction:", " ".join(words.get(t, f"landmark{t - 20}") for t in episode.instruction))

cfg = ModelConfig(max_steps=10)
params = init_params(cfg, np.random.default_rng(0))
_, (result,) = rollout(params, [episode], mode="sample", rng=np.random.default_rng(1),
                       features=DESK, keep_trace=True)

np.set_printoptions(precision=2, suppress=True)
for t, s in enumerate(result.trace):
    live = s["mask"]
    print(f"\nstep {t}: at {s['viewpoint']}  progress {s['progress']:+.3f}  "
          f"forward/rollback weights {s['alpha_fr']}")
    print("  marker deltas ", s["marker_deltas"][live])
    print("  action probs  ", s["probs"][live])
    move = "stop" if s["chosen"] == 0 else f"slot {s['chosen']}"
    print(f"  chose {move}{'  (rollback)' if s['rollback'] else ''}")

print(f"\nvisited {result.viewpoints}")
print(f"rollbacks: {result.rollback_steps}, final distance to goal "
      f"{graph.distance(result.final, episode.goal):.2f} m")
