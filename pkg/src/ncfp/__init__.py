"""Exact worst-case delay bounding for feedforward FIFO networks.

The package combines three layers:

  * ``minplus`` / ``sampling`` -- a symbolic min-plus curve algebra over
    affine expressions in free theta parameters, paired with an exact
    piecewise-linear brute-force engine used as an independent oracle.
  * ``netmodel`` / ``ludb`` / ``lp`` / ``prolong`` -- the server-graph model,
    the FIFO tandem analysis (nesting trees, cut sets, residual-service
    terms, rational-LP optimization) and flow-prolongation search.
  * ``gnn`` / ``train`` -- a message-passing network over an encoding of the
    analysis instance, trained with a policy gradient against the analysis
    itself, predicting which prolongations to evaluate.

All bound computations use exact rational arithmetic; floats appear only in
the neural network and in convenience conversions.
"""

from fractions import Fraction

__all__ = ["Fraction"]
__version__ = "0.1.0"
