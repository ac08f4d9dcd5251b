# coding: utf-8

# # Vehicle, LiDAR and collisions
#
# Two cars share a map.  Each one is a single-track model with tire slip,
# integrated with RK4 at 100 Hz, and each sees the walls and the other car
# through a 108-beam, 270 degree ray-marched LiDAR.

# In[1]:

import math

import numpy as np

from gtrace.rollout import load_track
from gtrace.sim import (Collision, Control, SimConfig, SimWorld, VehicleParams, VehicleState, check_collision,
                        ray_march, step_dynamics, step_world)

track = load_track("A")
line = track.raceline
print(f"map A: {track.grid.width_cells} x {track.grid.height_cells} cells at {track.grid.resolution} m, "
      f"raceline {line.total_length:.1f} m")


# ## Steady turn
#
# Below the kinematic switch speed the car follows the bicycle geometry exactly,
# so a constant steering angle traces a circle of radius wheelbase / tan(steer).

# In[2]:

p = VehicleParams()
s = VehicleState(steer=0.3, v=0.3)
xs, ys = [], []
for _ in range(1500):
    s = step_dynamics(s, Control(0.3, 0.0), p, 0.01)
    xs.append(s.x)
    ys.append(s.y)
xs, ys = np.array(xs), np.array(ys)
c = np.linalg.lstsq(np.column_stack([xs, ys, np.ones_like(xs)]), xs ** 2 + ys ** 2, rcond=None)[0]
radius = math.sqrt(c[2] + (c[0] / 2) ** 2 + (c[1] / 2) ** 2)
print(f"fitted radius {radius:.4f} m, geometry says {p.wheelbase / math.tan(0.3):.4f} m")


# ## What the LiDAR sees
#
# Put the ego on the raceline and the opponent 1.5 m ahead of it.  The forward
# beams stop on the opponent's rectangle, the side beams on the walls.

# In[3]:

x, y, th, v = line.pose_at(10.0)
x2, y2, th2, _ = line.pose_at(11.5)
rect = np.array([x2, y2, th2, p.length, p.width])
scan = ray_march((x, y, th), track.grid, rect, SimConfig().scan)
fwd = np.argmin(np.abs(scan.angles))
print(f"forward range {scan.ranges[fwd]:.3f} m, nearest return {scan.ranges.min():.3f} m, "
      f"farthest {scan.ranges.max():.3f} m")


# ## Crashing into a wall
#
# Full throttle with the wheel locked left, opponent parked far away.  The world stops integrating a car
# the moment its footprint touches the map.

# In[4]:

x3, y3, th3, _ = line.pose_at(40.0)
world = SimWorld(track.grid, VehicleState(x=x, y=y, yaw=th, v=3.0), VehicleState(x=x3, y=y3, yaw=th3))
for step in range(500):
    world, flags = step_world(world, Control(0.4, 5.0), Control(0.0, 0.0))
    if flags:
        print(f"step {step}: {Collision(flags & 7)!r}, ego frozen at v={world.ego.v:.2f}")
        break
print("final check:", check_collision(world))
