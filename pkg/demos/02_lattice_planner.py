# coding: utf-8

# # Lattice planner
#
# Every 0.1 s the planner samples goal poses around the raceline ahead, joins
# each one to the car with a cubic spiral, scores the candidates with seven
# weighted costs and tracks the cheapest with Pure Pursuit.

# In[1]:

import numpy as np

from gtrace.objectives import make_race, make_scenario, segment_result
from gtrace.planner import AgentParams, Planner, PlannerConfig, sample_goals
from gtrace.rollout import Agent, load_track
from gtrace.sim import VehicleState

track = load_track("A")
line = track.raceline
cfg = PlannerConfig()


# ## One planning cycle by hand

# In[2]:

x, y, th, v = line.pose_at(20.0)
ego = VehicleState(x=x, y=y, yaw=th, v=0.7 * v)
x2, y2, th2, _ = line.pose_at(21.5)
opp = VehicleState(x=x2, y=y2, yaw=th2, v=0.5 * v)
goals = sample_goals(ego, line, cfg.n_goals, cfg.n_speeds, cfg.lookahead, cfg.lateral_span)
print(f"{len(goals.poses)} goals, lateral offsets {np.round(np.unique(goals.offsets), 2)}, "
      f"speed scales {np.round(np.unique(goals.scales), 2)}")
planner = Planner(AgentParams(0.8, *[5.0] * 7), line, track.grid, config=cfg)
traj = planner.plan(ego, opp)
print(f"picked goal {traj.goal_index} at speed scale {traj.velocity_scale:.2f}")
print("control:", planner.control(ego))


# ## Weights change behaviour
#
# The eighth parameter scales the raceline speed; the other seven weigh the
# costs.  A timid agent and a fast one starting from the same spot:

# In[3]:

sc = make_scenario(track, 20.0, 4.0, 0.0, 0.0)
timid = AgentParams(0.6, *[5.0] * 7)
fast = AgentParams(1.0, 1.0, 1.0, 1.0, 5.0, 1.0, 10.0, 1.0)
for name, p in [("timid", timid), ("fast", fast)]:
    r = segment_result(make_race(track, Agent(p), Agent(timid), sc).run(8.0), line)
    print(f"{name:6s} progress {r.progress_ego:6.2f} m, crashed {r.ego_crashed_into_opp}, "
          f"objective point ({r.objectives.agg:.2f}, {r.objectives.res:.2f})")
