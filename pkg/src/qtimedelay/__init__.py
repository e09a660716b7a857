"""Time delay for discrete-time unitary scattering on a lattice.

Free propagators are fibered in momentum; full propagators add a
short-range perturbation. The package computes wave and scattering
operators, sojourn times and the symmetrised time delay, and compares the
latter with the Eisenbud-Wigner delay read off the scattering matrix.
"""

__version__ = "0.1.0"
