import numpy as np

from multicalib.core import DeterministicPredictor, LevelGrid, load_distribution
from multicalib.experiments import BUNDLED_DIR
from multicalib.objectives import build_multicalib_problem


def bundled(name):
    return load_distribution(BUNDLED_DIR / name)


def realizable_problem(lam=0.25):
    dist = bundled("realizable_8.json")
    return build_multicalib_problem(dist, dist.groups, LevelGrid(lam))


def random_predictor(rng, domain_size, k=2):
    return DeterministicPredictor(rng.dirichlet(np.ones(k), size=domain_size))
