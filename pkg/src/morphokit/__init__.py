"""Image-based modelling of morphogen patterns on growing 2D domains.

Boundary curves are extracted from images (``ingest``), matched between
developmental stages (``mapping``), meshed (``mesh``) and used as domains
for reaction-diffusion simulations (``fem``) whose parameters are fitted
to target patterns (``infer``). ``cli`` wires the stages together.
"""
__version__ = "0.1.0"
