"""Ablation and fusion-strategy comparisons over several seeds."""
import logging
from dataclasses import dataclass, field

import numpy as np

from .train import evaluate, load_splits, train

log = logging.getLogger(__name__)

# name -> config overrides
VARIANTS = {
    "full": {},
    "no_sesg": {"ablation": "no_sesg"},
    "no_sylg": {"ablation": "no_sylg"},
    "no_fusion": {"ablation": "no_fusion"},
    "concat": {"fusion_mode": "concat"},
    "sum": {"fusion_mode": "sum"},
    "gate": {"fusion_mode": "gate"},
}


@dataclass
class AblationTable:
    seeds: list
    accuracy: dict = field(default_factory=dict)  # variant -> per-seed eval accuracy
    macro_f1: dict = field(default_factory=dict)

    def mean(self, variant):
        return float(np.mean(self.accuracy[variant]))

    def render(self):
        head = f"{'variant':<10} {'mean_acc':>9} {'mean_f1':>9}  " + " ".join(f"seed{s:<4}" for s in self.seeds)
        lines = [head]
        for name in self.accuracy:
            per_seed = " ".join(f"{a:<8.4f}" for a in self.accuracy[name])
            lines.append(f"{name:<10} {self.mean(name):>9.4f} {np.mean(self.macro_f1[name]):>9.4f}  {per_seed}")
        return "\n".join(lines) + "\n"


def run_ablation(config, variants=None):
    """Train each variant for every seed in ``config.ablation_seeds`` on the same splits."""
    names = list(variants or VARIANTS)
    splits = load_splits(config)
    table = AblationTable(config.seeds())
    for name in names:
        table.accuracy[name], table.macro_f1[name] = [], []
        for seed in table.seeds:
            cfg = config.replace(seed=seed, **VARIANTS[name])
            result = train(cfg, splits.train, splits.dev)
            metrics = evaluate(result.model, splits.eval)
            log.info("%s seed=%d %s", name, seed, metrics.line())
            table.accuracy[name].append(metrics.accuracy)
            table.macro_f1[name].append(metrics.macro_f1)
    return table
