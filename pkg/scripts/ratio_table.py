"""Median cut-off ratio per eps and beta, as a plain table.

    python3 scripts/ratio_table.py --replicas 100 --out ratio.csv
"""
import argparse

from critchaos import harness as hz


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicas", type=int, default=100)
    ap.add_argument("--eps-count", type=int, default=9)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="optional CSV of per-replica records")
    args = ap.parse_args()

    d = hz.default_config("ratio").to_dict()
    d.update(replicas=args.replicas, eps_count=args.eps_count, workers=args.workers)
    if args.seed is not None:
        d["master_seed"] = args.seed
    d["params"]["z_replicas"] = 2000
    cfg = hz.ExperimentConfig.from_dict(d)
    rep = hz.run_ratio_experiment(cfg)
    print(f"{'eps':>10} " + " ".join(f"{'b=' + format(b, 'g'):>16}" for b in cfg.params["betas"])
          + f" {'M median':>10}")
    for e in cfg.eps_schedule:
        cells = []
        for b in cfg.params["betas"]:
            s = rep.summary["ratio"][f"beta={b:g},eps={e:.6g}"]
            cells.append(f"{s['median']:.4f}+-{s['median_se']:.4f}")
        m = rep.diagnostics["critical_mass_medians"][f"{e:.6g}"]
        print(f"{e:10.3g} " + " ".join(f"{c:>16}" for c in cells) + f" {m:10.4f}")
    for g in rep.gates.values():
        print(f"[{g.criterion}] {g.name}: {g.status}")
    if args.out:
        hz.emit_report(rep, "csv", args.out)


if __name__ == "__main__":
    main()
