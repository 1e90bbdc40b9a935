"""Pricing under asymmetric and imperfect collateralization.

Clean (perfectly, symmetrically collateralized) values of OIS and
mark-to-market cross-currency OIS, first-order collateral cost (CCA) and
credit (CVA) adjustments over simulated Hull-White paths, and a
finite-difference solver for the nonlinear-discounting PDE used as an oracle.
"""

__version__ = "0.1.0"
