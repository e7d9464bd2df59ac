"""Sound adversarial perturbations and attacks for neural SAT and TSP solvers."""

__version__ = "0.1.0"
