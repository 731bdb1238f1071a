"""Hyperparameter sweeps: attention/gate sizes and hidden width."""

from __future__ import annotations

from itertools import product

from .config import RunConfig, with_overrides
from .errors import ConfigError
from .graph import AtlasMaskLibrary, Dataset
from .train import cross_validate

SWEEP_AXES = ("cna_giac", "neurons")


def sweep_points(cfg: RunConfig, axis: str) -> list:
    """Config overrides for every grid point of ``axis``."""
    if axis == "cna_giac":
        return [{"fusion": {"cna_dim": c, "giac_hidden": g}}
                for c, g in product(cfg.sweep.cna_dims, cfg.sweep.giac_hiddens)]
    if axis == "neurons":
        return [{"gcn": {"hidden_width": w}} for w in cfg.sweep.neurons]
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}", keys=[axis])


def run_sweep(dataset: Dataset, cfg: RunConfig, axis: str,
              atlas: AtlasMaskLibrary | None = None, log=None) -> list:
    """One cross-validated run per grid point; node selection is shared
    across points since it does not depend on the swept settings."""
    points = sweep_points(cfg, axis)
    selections = {}
    rows = []
    for over in points:
        point_cfg = with_overrides(cfg, **over)
        res = cross_validate(dataset, point_cfg, atlas, selections, measure_memory=False)
        summ = res.summary()
        rows.append({"axis": axis,
                     "cna_dim": point_cfg.fusion.cna_dim,
                     "giac_hidden": point_cfg.fusion.giac_hidden,
                     "hidden_width": point_cfg.gcn.hidden_width,
                     "acc_mean": summ["acc_mean"],
                     "auc_mean": summ["auc_mean"],
                     "epoch_time_s": summ["epoch_time_s"]})
        if log:
            log(f"{axis} {over}: acc {summ['acc_mean']:.3f}")
    return rows
