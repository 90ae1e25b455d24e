import numpy as np
import pytest

from pbtlab.population import PopulationLog


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def build_log(eval_counts, losses=None, path=None):
    """Synthetic population log with the given evaluated-record counts per
    generation. Parents are chained through the first record of the previous
    generation; losses default to distinct increasing values."""
    log = PopulationLog(path)
    by_gen = {}
    loss_iter = iter(losses) if losses is not None else None
    next_loss = [0.0]

    def take_loss():
        if loss_iter is not None:
            return next(loss_iter)
        next_loss[0] += 1.0
        return next_loss[0]

    max_gen = max(eval_counts) if eval_counts else -1
    for g in range(max_gen + 1):
        n = eval_counts.get(g, 0)
        made = []
        for i in range(max(n, 1)):  # at least one record per gen to chain parents
            if g == 0:
                rec = log.add_seed({"p": 0.5}, state_ref=f"states/seed{i}.bin")
            else:
                rec = log.add_child(by_gen[g - 1][0], {"p": 0.5})
            if i < n:
                log.report_result(rec.id, take_loss(), state_ref=f"states/{rec.id}.bin")
            made.append(rec)
        by_gen[g] = made
    return log, by_gen
