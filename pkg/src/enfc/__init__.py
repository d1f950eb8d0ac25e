"""Clinical-trial enrollment forecasting toolkit.

Deterministic and Gamma-output neural regressors over fused text-embedding
and tabular features, a Poisson-Gamma Monte Carlo simulator for trial
duration, and a filter-and-fit statistical baseline, with training,
prediction, interval-estimation, simulation, and evaluation pipelines.
"""

__version__ = "0.1.0"
