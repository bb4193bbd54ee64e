"""Self-checks shared by the CLI and the acceptance suite."""
from dataclasses import dataclass

import numpy as np

from . import oracle
from . import tensor as T
from .data import SentenceRecord
from .model import Config
from .sesg import segment_mask
from .sylg import tree_marginals
from .train import build_model

# five tokens, two constituent layers deep enough to differ
GRADCHECK_RECORD = SentenceRecord(
    tokens="the food is very good".split(),
    aspect_from=1,
    aspect_to=1,
    polarity="positive",
    dep_head=[2, 5, 5, 5, 0],
    dep_label=["det", "nsubj", "cop", "advmod", "root"],
    constituency="(S (NP (DT the) (NN food)) (VP (VBZ is) (ADJP (RB very) (JJ good))))",
)


def gradcheck_config(seed=1):
    return Config(d=16, l=2, n_head_sylg=2, d_rel=4, n_max=5, cross_heads=2, seed=seed, init_range=0.3)


def model_grad_check(seed=1, config=None, tol=1e-4):
    """Central differences over every parameter of the full composite loss."""
    config = config or gradcheck_config(seed)
    model = build_model(config, [GRADCHECK_RECORD])
    ex = model.featurize(GRADCHECK_RECORD)
    model.loss(ex)
    return T.grad_check(lambda: model.loss(ex)[0], model.params, tol=tol)


@dataclass
class OracleReport:
    trials: int
    max_edge_err: float
    max_root_err: float
    max_root_sum_err: float
    max_column_err: float
    min_marginal: float
    max_marginal: float

    def passed(self, tol=1e-8):
        return (
            max(self.max_edge_err, self.max_root_err, self.max_root_sum_err, self.max_column_err) <= tol
            and self.min_marginal >= -tol
            and self.max_marginal <= 1 + tol
        )

    def line(self):
        return (
            f"trials={self.trials} edge_err={self.max_edge_err:.3e} root_err={self.max_root_err:.3e} "
            f"root_sum_err={self.max_root_sum_err:.3e} column_err={self.max_column_err:.3e}"
        )


def random_tree_instance(rng):
    n = int(rng.integers(2, 7))
    # uniform on (0, 1]
    edge = 1.0 - rng.random((n, n))
    return edge, 1.0 - rng.random(n)


def oracle_check(trials=100, seed=0, variant="row_replace"):
    """Compare matrix-tree marginals against enumeration on random instances."""
    rng = np.random.default_rng(seed)
    errs = np.zeros(4)
    lo, hi = np.inf, -np.inf
    for _ in range(trials):
        edge, root = random_tree_instance(rng)
        result = tree_marginals(edge, root, variant=variant)
        a, p = result.edge_marginals.value, result.root_probs.value
        _, a_ref, p_ref = oracle.enumerate_arborescences(edge, root)
        errs = np.maximum(
            errs,
            [
                np.abs(a - a_ref).max(),
                np.abs(p - p_ref).max(),
                abs(p.sum() - 1.0),
                np.abs(p + a.sum(axis=0) - 1.0).max(),
            ],
        )
        lo = min(lo, a.min(), p.min())
        hi = max(hi, a.max(), p.max())
    return OracleReport(trials, *map(float, errs), float(lo), float(hi))


def band_check(cases=50, seed=0, max_n=10):
    """Count of random boundary cases where one-hot segment masks differ from the band."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(cases):
        n = int(rng.integers(1, max_n + 1))
        lp = np.array([rng.integers(0, i + 1) for i in range(n)])
        rp = np.array([rng.integers(i, n) for i in range(n)])
        eye = np.eye(n)
        soft = segment_mask(eye[lp], eye[rp]).value
        if not np.array_equal(soft, oracle.hard_segment_band(lp, rp)):
            mismatches += 1
    return mismatches
