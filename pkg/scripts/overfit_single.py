"""Fit one block chair from its training views and report PSNR / depth error as training proceeds.

    python3 scripts/overfit_single.py --steps 2000 --lr 2e-3 --every 500
"""

import argparse
import json
import time

from srnseg.data import generate_dataset
from srnseg.experiments import OverfitConfig, run_overfit, score_views
from srnseg.model import ModelConfig
from srnseg.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--batch-rays", type=int, default=1024)
    ap.add_argument("--object-seed", type=int, default=3)
    ap.add_argument("--model-seed", type=int, default=0)
    ap.add_argument("--dim", type=int, default=32, help="latent / feature / marcher / rgb width")
    ap.add_argument("--hidden", type=int, default=64, help="scene MLP width")
    ap.add_argument("--every", type=int, default=500, help="evaluation interval in steps (0 = end only)")
    ap.add_argument("--save", help="write the fitted checkpoint here")
    args = ap.parse_args()

    d = args.dim
    cfg = OverfitConfig(
        object_seed=args.object_seed,
        model=ModelConfig(latent=d, hidden=args.hidden, features=d, march_hidden=d, rgb_hidden=d, seed=args.model_seed),
        train=TrainConfig(steps=args.steps, lr=args.lr, batch_rays=args.batch_rays, log_every=0),
    )
    # same object run_overfit builds, kept here for intermediate scoring
    inst = generate_dataset(cfg.template, 1, cfg.views, 0, cfg.resolution, seed=cfg.object_seed).instances[0]
    t0 = time.time()

    def progress(step, model):
        if args.every and (step + 1) % args.every == 0 and step + 1 < args.steps:
            p, dm = score_views(model, inst.id, inst.train_views)
            print(json.dumps({"step": step + 1, "time": round(time.time() - t0, 1), "psnr": round(p, 3),
                              "depth_median": round(dm, 4)}), flush=True)

    res = run_overfit(cfg, callback=progress)
    print(json.dumps({"step": args.steps, "time": round(res.seconds, 1), "psnr": round(res.psnr_mean, 3),
                      "depth_median": round(res.depth_median, 4)}), flush=True)
    if args.save:
        res.model.save(args.save)


if __name__ == "__main__":
    main()
