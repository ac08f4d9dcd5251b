# coding: utf-8

# # From weights to objective space
#
# An 8 s rollout against an opponent maps an agent to two numbers:
# aggressiveness (progress relative to the opponent, lower is more aggressive)
# and restraint (how short the time-to-collision got, lower is more careful).
# CMA-ES searches the weights, a Pareto archive keeps the non-dominated agents,
# and a k-DPP picks a diverse set of prototypes near the front.

# In[1]:

from gtrace.evo import extract_prototypes, optimize
from gtrace.objectives import make_scenario_set
from gtrace.rollout import load_track

track = load_track("A")
scenarios, opponents = make_scenario_set(track, 4, seed=0)
print(f"{len(scenarios)} scenarios, gaps {[round(s.gap, 2) for s in scenarios]}")


# ## A short optimization

# In[2]:

def show(s):
    print(f"gen {s.generation}: mean point ({s.mean_agg:.2f}, {s.mean_res:.2f}), sigma {s.sigma:.2f}")

archive, state, stats = optimize(track, scenarios, opponents, generations=4, pop=8, seed=0, progress=show)
front = sorted((e.point.agg, e.point.res) for e in archive.entries)
print(f"explored {len(archive.all_explored)}, front {len(front)}:")
for a, r in front:
    print(f"  agg {a:7.2f}  res {r:6.2f}")


# ## Prototypes
#
# A wide near-optimal radius keeps this tiny run from running out of agents.

# In[3]:

protos = extract_prototypes(archive, d_near=2.0, n_dpp=3, seed=0)
print(f"near-optimal set {len(protos.near_optimal)} agents")
for name, ids in [("first draw ", protos.dpp1), ("second draw", protos.dpp2)]:
    print(name, [f"({protos.explored[i].point.agg:.2f}, {protos.explored[i].point.res:.2f})" for i in ids])
