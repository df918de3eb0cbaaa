"""Deterministic leader-follower co-manipulation simulator.

A redundant 7-DoF follower arm runs a prioritized task stack (Cartesian
and force tasks with manipulability and joint-limit secondaries) solved
by a cascaded box-constrained QP, driven by synthetic skeleton tracking,
point-cloud object detection, and tactile slip monitoring through a
phase-switching behavior machine. Trial logs feed five evaluation
metrics emitted in a comparison report.
"""

__version__ = "0.1.0"
