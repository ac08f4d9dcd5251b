"""Game-theoretic objective-space planning for two-car racing.

Modules, bottom up: ``track`` (maps, racelines, Frenet projection), ``sim``
(vehicle dynamics, LiDAR, collisions), ``planner`` (lattice planner with
Pure Pursuit), ``rollout`` (compiled closed-loop races), ``objectives``,
``evo`` (CMA-ES, Pareto archive, k-DPP), ``game`` (self-play and CFR),
``regret_model``, ``pipeline`` (online play) and ``harness`` (experiments).
"""

__version__ = "0.1.0"
