"""nbvsim: simulation engine and benchmark harness for next-best-view
active 3D reconstruction.

Depth rendering against triangle meshes, probabilistic occupancy fusion,
coverage-scored scan episodes, heuristic and greedy view-planning policies,
evaluation metrics, and a newline-JSON wire protocol for external policies.
"""

__version__ = "0.1.0"
