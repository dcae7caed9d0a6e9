"""Reference-free evaluation harness for generated web applications.

The package has two halves.  The data half turns a raw pool of user queries
into a balanced benchmark corpus: near-duplicate removal, admissibility
gating, taxonomy classification, difficulty grading, and language
rebalancing.  The evaluation half deploys generated projects, drives them
with an interaction agent, scores them with a staged judge protocol, and
aggregates results into leaderboards and agreement reports.
"""

__version__ = "0.1.0"
