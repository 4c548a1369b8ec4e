"""Two-phase two-component porous media flow with complementarity-based
phase transitions, solved fully implicitly by a semi-smooth Newton method
whose linear systems go to GMRES preconditioned by multigrid reduction."""

__version__ = "0.1.0"
