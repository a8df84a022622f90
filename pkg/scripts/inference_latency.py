"""Single-day forecast latency of the full-size magnitude and start-time networks.

Times one eval-mode forward pass on a real (96, 32) window and, for context,
the cost of the largest recurrent matrix-vector product alone.
"""

import argparse
import time
from datetime import date

import numpy as np

from rampcast.config import RunConfig, SyntheticSource
from rampcast.features import build_dataset, make_window
from rampcast.neural import forward, init_params
from rampcast.ramps import build_label_set
from rampcast.timeseries import synth_duck


def median_ms(fn, repeats):
    fn()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append((time.perf_counter() - t0) * 1000)
    return float(np.median(runs))


def main(repeats: int) -> None:
    frame = synth_duck(7, 30)
    ds = build_dataset(frame, build_label_set(frame))
    X = make_window(frame, ds.scalers, date(2019, 1, 20)).X
    cfg = RunConfig(synthetic=SyntheticSource())
    for target in ("magnitude", "start_time"):
        tc = cfg.train_config("PM", target)
        model = init_params(tc.network, 0)
        hidden = "/".join(str(la.hidden) for la in tc.network.layers)
        ms = median_ms(lambda: forward(model, X), repeats)
        widest = max(model.cells, key=lambda c: c.U.size)
        h = np.zeros(widest.hidden_size)
        step_ms = median_ms(lambda: h @ widest.U, repeats * 20)
        print(f"{target:<11} {hidden:<12} forward {ms:7.1f} ms | one {widest.U.shape} recurrent matvec {step_ms:.3f} ms x 96 steps = {96 * step_ms:.1f} ms")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=7)
    main(p.parse_args().repeats)
