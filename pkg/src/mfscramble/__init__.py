"""Mean-field scrambling: Hartree dynamics, Bogoliubov propagation and OTOCs for bosons.

Modules: :mod:`space` (mode spaces, fields, observables), :mod:`hartree`
(condensate dynamics), :mod:`bogoliubov` (fluctuation propagator),
:mod:`scrambling` (large-N OTOC, covariance and Wick formulas),
:mod:`oracle` (exact finite-N reference) and :mod:`cli`.
"""

__version__ = "0.1.0"
