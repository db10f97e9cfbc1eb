"""Scale-space interventions and model audits built on constrained diffusion.

Modules
-------
field         ScalarField, NDF I/O, projection, mass, power spectra
cdd           constrained diffusion decomposition
intervention  single-channel perturbation, cascade tilt, exponent fit
synth         seeded lognormal fields and Gaussian blobs
audit         model-under-test driver, response metrics, scans
fixtures      built-in deterministic models for validating the audit
cli           command-line interface
"""

__version__ = "0.1.0"
