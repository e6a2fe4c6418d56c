"""Volt-Var control laboratory for radial distribution feeders.

Modules: gridflow (network + power flow), newton (oracle solver),
scenario (load/PV profiles), actionspace (pre-action geometry), neural
(MLP/Adam/policy head), refopt (model-based dispatch), sac (residual
soft actor-critic), harness + cli (experiments).
"""

__version__ = "0.1.0"
