"""Moment identities and invariance checks for Poisson point processes.

Modules:

``combinatorics``  Touchard polynomials, Stirling numbers, identity coefficients;
``pointprocess``   domains, intensity measures, configurations, sampling;
``malliavin``      add-point gradients, Skorohod integrals, Delta-operators;
``moments``        moment identities as term lists, MC and exact evaluation;
``transforms``     random transformations and their pushforwards;
``catalog``        named processes, functionals, transformations, measures;
``harness``        invariance suite, pathwise oracles, reports;
``cli``            the ``ppinv`` command.
"""

__version__ = "0.1.0"
