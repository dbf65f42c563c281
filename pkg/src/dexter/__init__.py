"""Mission-planning engine and fleet simulator.

Pipeline: parse an LTL mission into a task poset, generate candidate
subtask strategies per task through a staged text-generation pipeline,
assign and schedule subtasks onto heterogeneous robots with a
branch-and-bound search, and adapt online to seven event classes under
human-in-the-loop verification.
"""

__version__ = "0.1.0"
