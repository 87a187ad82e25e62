"""Synthetic experiment engine for minimal-length searches on a cooled membrane oscillator.

Simulates the full chain of a sideband-cooled optomechanical experiment probing
a deformed position-momentum commutator: deformed-bracket dynamics, optical
cooling and spring, balanced-heterodyne synthesis, lock-in demodulation,
ring-down and transient-shift fitting, and extraction of an upper limit on the
deformation parameter beta0.
"""

__version__ = "0.1.0"
