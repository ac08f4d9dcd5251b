# coding: utf-8

# # Racing with the regret model
#
# During a race the ego measures the opponent's objective point over the last
# segment, asks the model which move has the highest regret, moves there and
# switches to the nearest prototype's weights.  A fixed-weight ego just keeps
# its starting weights.  The harness compares the two with a paired t-test
# over prototype pairings.

# In[1]:

import numpy as np

from gtrace.evo import Explored, PrototypeSets
from gtrace.harness import MatchSpec, race_report, run_match
from gtrace.objectives import ObjectivePoint
from gtrace.pipeline import OnlineState, run_online
from gtrace.planner import AgentParams
from gtrace.regret_model import MlpParams
from gtrace.rollout import Agent, load_track
from gtrace.harness import start_line

track = load_track("A")
rng = np.random.default_rng(1)
pts = [(a, r) for a in (-3.0, -2.0, -1.0, 0.0) for r in (8.0, 10.0)]
explored = [Explored(AgentParams.random(rng), ObjectivePoint(a, r), 0, i) for i, (a, r) in enumerate(pts)]
protos = PrototypeSets(explored, [0, 1], list(range(len(pts))), [5, 6], [0, 3])

# an untrained network stands in for a trained one here
model = MlpParams.init(np.random.default_rng(0), 40, 64)


# ## One traced race

# In[2]:

ego = OnlineState(model, explored, 5)
trace = run_online(track, start_line(track, 40.0, 0), ego, Agent(explored[0].params), total_moves=2, segment=4.0)
for t, action, proto in trace.decisions:
    print(f"t={t:4.1f} s  action {action}  now at {explored[proto].point}")
print(f"final lead {trace.final_lead:.2f} m, crashes ego={trace.ego_crashed} opp={trace.opp_crashed}")


# ## A small match

# In[3]:

common = dict(opponent="fixed_dpp2", map_name="A", starts=2, moves=2, segment=4.0)
gt = run_match(MatchSpec(ego="gt", **common), track, protos, model, 0.01, seed=0)
fixed = run_match(MatchSpec(ego="fixed", **common), track, protos, None, None, seed=0)
rep = race_report(gt, fixed)
print(f"game-theoretic {rep['treatment']['mean']:.3f} vs fixed {rep['control']['mean']:.3f} "
      f"over {rep['treatment']['races']} races each, t={rep['t']:.3f} p={rep['p']:.3f}")
