#!/usr/bin/env python3
"""PSNR vs bits/coord for all four schemes on garden-desk (ablation data).

Writes the sweep CSV and, with --plot, a PSNR-versus-rate figure.

Usage: python scripts/ablation_sweep.py --out ablation.csv [--plot fig.png]
"""

import argparse
from dataclasses import replace

from gsqz import metrics, quantize, scenes
from gsqz.quantize import QuantScheme


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bits", default="8,10,12,14,16")
    ap.add_argument("--n-gaussians", type=int, default=scenes.GARDEN_DESK.n_gaussians)
    ap.add_argument("--out", default="ablation.csv")
    ap.add_argument("--plot", default=None, help="optional output figure path")
    args = ap.parse_args()
    bits_list = [int(b) for b in args.bits.split(",")]

    spec = replace(scenes.GARDEN_DESK, n_gaussians=args.n_gaussians)
    model, rig, _ = scenes.generate(spec)
    geometry = quantize.derive_geometry(rig)
    points = metrics.rd_sweep(model, rig, geometry, list(QuantScheme), bits_list,
                              render_views=True)
    metrics.write_rd_csv(points, args.out)
    print(metrics.rd_csv(points))
    print(f"wrote {args.out}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for scheme in QuantScheme:
            rows = [p for p in points if p.scheme == scheme.value]
            ax.plot([p.total_bits_per_coord for p in rows],
                    [p.psnr_db for p in rows], marker="o", label=scheme.value)
        ax.set_xlabel("bits / coord (incl. split overhead)")
        ax.set_ylabel("PSNR (dB)")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(args.plot, dpi=150)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
