"""Record the regression constants used by the covariance and min-particle gates.

Runs the default covariance and min-particle experiments once and writes
src/critchaos/baselines.json. Deterministic bounds get a 10% margin, the
Monte Carlo shift a band of 4 SE (at least 0.05) below the observed value.
"""
import json
from pathlib import Path

import numpy as np

from critchaos import harness as hz

OUT = Path(__file__).resolve().parents[1] / "src" / "critchaos" / "baselines.json"


def main():
    cov = hz.run_covariance_experiment(hz.default_config("covariance"))
    c = cov.summary["comparison"]
    mp = hz.run_minparticle_experiment(hz.default_config("min-particle"))
    m = mp.summary["min_particle"]
    margin = lambda v: {"value": float(v), "tolerance": float(0.1 * abs(v))}
    base = {
        "covariance_deviation_range": margin(cov.summary["covariance"]["deviation_range"]),
        "lambda_log_bound": margin(c["lambda_log"]),
        "rho_sup_bound": margin(c["rho_sup"]),
        "star_lambda_log_bound": margin(c["star_lambda_log"]),
        "star_rho_sup_bound": margin(c["star_rho_sup"]),
        "min_particle_shift_band": {"lo": float(m["mean_shift"] - max(4 * m["mean_shift_se"], 0.05)),
                                    "hi": 0.0},
    }
    OUT.write_text(json.dumps(base, indent=2, sort_keys=True) + "\n")
    print(json.dumps(base, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
