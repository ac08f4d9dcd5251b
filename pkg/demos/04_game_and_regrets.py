# coding: utf-8

# # The racing game and its regrets
#
# Each player moves its operating point one unit along an objective axis, then
# both drive 8 s with the prototype nearest to where they moved.  The ego's
# utility is its final lead.  Playing out every joint action sequence gives a
# utility table; counterfactual regrets over that table become training
# targets for a small network.

# In[1]:

import numpy as np

from gtrace.evo import Explored
from gtrace.game import GameConfig, exact_cfr, play_out_table, regret_match, table_samples
from gtrace.harness import start_line
from gtrace.objectives import ObjectivePoint
from gtrace.planner import AgentParams
from gtrace.regret_model import TrainConfig, forward, train
from gtrace.rollout import load_track

track = load_track("A")
rng = np.random.default_rng(0)
grid = [(a, r) for a in (-2.0, -1.0, 0.0, 1.0) for r in (8.0, 9.0, 10.0)]
prototypes = [Explored(AgentParams.random(rng), ObjectivePoint(a, r), 0, i) for i, (a, r) in enumerate(grid)]


# ## One game, every branch
#
# Two moves per player means 16 x 16 terminal histories.  Shared prefixes are
# simulated once.

# In[2]:

cfg = GameConfig(moves=2, segment=4.0)
table = play_out_table(4, 7, prototypes, start_line(track, 30.0, 0), track, cfg)
print(f"utility table {table.utilities.shape}, lead range [{table.utilities.min():.2f}, "
      f"{table.utilities.max():.2f}] m, zero-sum: {np.all(table.utilities + table.opponent_utilities() == 0)}")


# ## Regrets at the root

# In[3]:

nodes = exact_cfr(table)
root = next(n for n in nodes if not n.infoset.ego_actions)
names = ["agg up", "agg down", "res up", "res down"]
for name, r, p in zip(names, root.regrets, regret_match(root.regrets)):
    print(f"{name:9s} regret {r:8.3f}  strategy {p:.2f}")
print(f"{len(nodes)} information sets in total")


# ## Learning the regrets

# In[4]:

samples = table_samples(table)
x = np.stack([s.features for s in samples])
y = np.array([s.target for s in samples])
params, curves = train(x, y, TrainConfig(epochs=600, hidden=256, val_fraction=0.0, seed=0))
print(f"{len(samples)} samples, final training L1 {curves[-1].train_l1:.3f}")
print("predicted root regrets:", np.round(forward(params, x[:4]), 3))
print("actual root regrets   :", np.round(y[:4], 3))
