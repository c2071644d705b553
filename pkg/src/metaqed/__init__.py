"""metaqed: quantized resonances of periodic nanoparticle arrays coupled to
periodic quantum-emitter lattices.

Pipeline: reciprocal-space spectral densities from Bloch-periodic Green
tensors (Ewald summation + coupled electric/magnetic dipoles), few-mode
lossy-cavity fits, driven steady states and polariton dispersions, and
two-photon pair-generation rates.
"""

__version__ = "0.1.0"
