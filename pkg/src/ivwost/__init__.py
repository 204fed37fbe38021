"""Interval-arithmetic geometric queries on implicit surfaces and a walk-on-stars
Laplace solver built on them.

Modules: :mod:`~ivwost.interval` (intervals, boxes, dual intervals),
:mod:`~ivwost.scene` (implicit fields and scene files), :mod:`~ivwost.globalopt`
(branch-and-bound MINIMIZE / SOLVE), :mod:`~ivwost.queries` (closest point, ray,
silhouette, Robin radius and boundary sampling queries), :mod:`~ivwost.wost`
(the estimator) and :mod:`~ivwost.oracles` (brute-force references).
"""

__version__ = "0.1.0"
