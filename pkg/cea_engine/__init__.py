"""
Cost-effectiveness engine for cluster randomized trials.

Bivariate cost/QALY random-effects models fitted by quadrature maximum
likelihood, multilevel multiple imputation with Rubin pooling, incremental
net benefit reporting and a synthetic trial generator. The batch pipeline in
``cea_engine.pipeline`` wires these together; ``python -m cea_engine`` is its
command-line front end.
"""
from concurrent.futures import ThreadPoolExecutor

__version__ = "0.3.0"

executor = ThreadPoolExecutor()
