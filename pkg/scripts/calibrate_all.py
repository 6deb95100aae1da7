"""Produce calibrated block lengths for the shipped experiment configs.

Writes progressive results to calib_results.json so partial output is
usable; items exceeding their time budget are marked for on-demand
calibration.
"""

import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import perfhmc as ph
from perfhmc.coupling import calibrate_block_length
from perfhmc.dynamics import KineticEnergy
from perfhmc.errors import CalibrationError
from perfhmc.trajectories import get_sampler

SEED = 3
OUT = Path(__file__).resolve().parents[1] / "calib_results.json"


def build(name, **kw):
    if name == "std":
        return ph.make_standard_normal(kw["d"])
    if name == "corr":
        return ph.make_correlated_normal(ph.CorrelatedNormalSpec(kw["d"], kw["rho"]))
    if name == "t":
        return ph.scale_transform(ph.make_t_distribution(kw["d"], kw["nu"]))
    if name == "mix":
        return ph.make_normal_mixture(ph.MixtureSpec(kw["d"], kw["mu"]))
    if name == "lasso":
        X, y, _ = ph.load_diabetes()
        return ph.scale_transform(ph.make_lasso(X, y, kw["lam"]))
    raise ValueError(name)


ITEMS = [
    # key, builder name, kwargs, alpha, sampler, runs
    ("std_d1_nuts4", "std", {"d": 1}, 2.0, "nuts4", 20),
    ("std_d1_fruts", "std", {"d": 1}, 2.0, "fruts", 20),
    ("std_d10_nuts4", "std", {"d": 10}, 2.0, "nuts4", 20),
    ("std_d10_fruts", "std", {"d": 10}, 2.0, "fruts", 20),
    ("std_d100_nuts4", "std", {"d": 100}, 2.0, "nuts4", 20),
    ("std_d100_fruts", "std", {"d": 100}, 2.0, "fruts", 20),
    ("t_d1_nuts4", "t", {"d": 1, "nu": 4.0}, 2.0, "nuts4", 20),
    ("t_d1_fruts", "t", {"d": 1, "nu": 4.0}, 2.0, "fruts", 20),
    ("mix_d1_mu4_nuts4", "mix", {"d": 1, "mu": 4.0}, 2.0, "nuts4", 20),
    ("mix_d1_mu4_fruts", "mix", {"d": 1, "mu": 4.0}, 2.0, "fruts", 20),
    ("lasso_l0_nuts4", "lasso", {"lam": 0.0}, 2.0, "nuts4", 20),
    ("lasso_l0.237_nuts4", "lasso", {"lam": 0.237}, 2.0, "nuts4", 20),
    ("corr_d2_r0.6_nuts4", "corr", {"d": 2, "rho": 0.6}, 2.0, "nuts4", 20),
    # remaining grid rows: reduced-run calibration
    ("corr_d2_r0.95_nuts4", "corr", {"d": 2, "rho": 0.95}, 2.0, "nuts4", 5),
    ("corr_d10_r0.1_nuts4", "corr", {"d": 10, "rho": 0.1}, 2.0, "nuts4", 5),
    ("corr_d10_r0.6_nuts4", "corr", {"d": 10, "rho": 0.6}, 2.0, "nuts4", 5),
    ("corr_d10_r0.95_nuts4", "corr", {"d": 10, "rho": 0.95}, 2.0, "nuts4", 5),
    ("lasso_l1_nuts4", "lasso", {"lam": 1.0}, 2.0, "nuts4", 5),
    ("lasso_l2_nuts4", "lasso", {"lam": 2.0}, 2.0, "nuts4", 5),
    ("lasso_l5_nuts4", "lasso", {"lam": 5.0}, 2.0, "nuts4", 5),
    ("lasso_l10_nuts4", "lasso", {"lam": 10.0}, 2.0, "nuts4", 5),
    ("mix_d1_mu6_nuts4", "mix", {"d": 1, "mu": 6.0}, 2.0, "nuts4", 5),
    ("mix_d1_mu6_fruts", "mix", {"d": 1, "mu": 6.0}, 2.0, "fruts", 5),
    ("mix_d10_mu4_nuts4", "mix", {"d": 10, "mu": 4.0}, 2.0, "nuts4", 5),
    ("mix_d10_mu6_nuts4", "mix", {"d": 10, "mu": 6.0}, 2.0, "nuts4", 5),
    ("t_d10_nuts4", "t", {"d": 10, "nu": 4.0}, 1.5, "nuts4", 5),
    ("corr_d100_r0.1_nuts4", "corr", {"d": 100, "rho": 0.1}, 2.0, "nuts4", 3),
    ("corr_d100_r0.1_fruts", "corr", {"d": 100, "rho": 0.1}, 2.0, "fruts", 3),
    ("mix_d100_mu4_nuts4", "mix", {"d": 100, "mu": 4.0}, 2.0, "nuts4", 3),
    ("t_d100_nuts4", "t", {"d": 100, "nu": 4.0}, 1.25, "nuts4", 3),
    ("mix_d100_mu6_nuts4", "mix", {"d": 100, "mu": 6.0}, 2.0, "nuts4", 3),
    ("corr_d100_r0.45_nuts4", "corr", {"d": 100, "rho": 0.45}, 2.0, "nuts4", 3),
]


def main():
    kin = KineticEnergy(2.0)
    results = {}
    if OUT.exists():
        results = json.loads(OUT.read_text())
    for key, name, kw, alpha, sampler_name, runs in ITEMS:
        if key in results:
            continue
        target = build(name, **kw)
        d = target.d
        dt = ph.time_step_for(d, alpha=alpha)
        sampler = get_sampler(sampler_name)
        t0 = time.perf_counter()
        try:
            n_t, rec = calibrate_block_length(target, sampler, kin, dt, 0.01,
                                              SEED, runs=runs)
            results[key] = {
                "n_t": n_t, "runs": runs, "alpha": alpha,
                "n_full_max": rec["n_full_max"],
                "seconds": round(time.perf_counter() - t0, 1),
            }
        except CalibrationError as exc:
            results[key] = {"n_t": None, "runs": runs, "alpha": alpha,
                            "error": str(exc),
                            "seconds": round(time.perf_counter() - t0, 1)}
        OUT.write_text(json.dumps(results, indent=2))
        print(key, "->", results[key], flush=True)
    print("done")


if __name__ == "__main__":
    main()
