"""Spectral Galerkin simulation of the stochastically forced kinetic Fokker-Planck equation."""
