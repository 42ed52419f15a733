"""Training, inference, and latent-export drivers.

Subcommands:
  train           fit a model on a dataset directory, checkpoint to --out
  predict         write reconstructed point clouds for a split
  export-latents  dump posterior means with labels for external projection
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .data import SensingDataset, batch_iterator
from .encoder import EMBEDDINGS, VARIANTS, EncoderConfig
from .model import GenMVModel, LossWeights, ModelConfig, TrainConfig, train
from .tensors import write_tensor


def build_model(dataset: SensingDataset, variant: str, embedding: str,
                channel_dim: int, latent_dim: int, num_layers: int,
                num_steps: int, widths=None) -> GenMVModel:
    enc = EncoderConfig(csi_dim=dataset.csi_feature_dim, variant=variant,
                        channel_dim=channel_dim, latent_dim=latent_dim,
                        num_layers=num_layers, embedding=embedding)
    mconf = ModelConfig(encoder=enc, num_steps=num_steps)
    if widths is not None:
        from .noisenet import NoiseNetConfig

        mconf.noise_net = NoiseNetConfig(widths=tuple(widths),
                                         latent_dim=latent_dim)
    return GenMVModel(mconf)


def _save_checkpoint(path: Path, model: GenMVModel, meta: dict) -> None:
    payload = {
        "state_dict": model.state_dict(),
        "encoder": model.config.encoder.__dict__,
        "noise_net": {"widths": model.config.noise_net.widths,
                      "time_dim": model.config.noise_net.time_dim,
                      "latent_dim": model.config.noise_net.latent_dim},
        "num_steps": model.config.num_steps,
        "meta": meta,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[GenMVModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    from .noisenet import NoiseNetConfig

    enc = EncoderConfig(**payload["encoder"])
    mconf = ModelConfig(encoder=enc, num_steps=payload["num_steps"])
    mconf.noise_net = NoiseNetConfig(
        widths=tuple(payload["noise_net"]["widths"]),
        time_dim=payload["noise_net"]["time_dim"],
        latent_dim=payload["noise_net"]["latent_dim"])
    model = GenMVModel(mconf)
    model.load_state_dict(payload["state_dict"])
    return model, payload["meta"]


def cmd_train(args) -> int:
    dataset = SensingDataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(args.seed)
    model = build_model(dataset, args.variant, args.embedding,
                        args.channel_dim, args.latent_dim, args.layers,
                        args.diffusion_steps,
                        widths=args.noise_widths)
    weights = LossWeights.standard() if args.standard_loss else \
        LossWeights(shape=args.gamma_s, em=args.gamma_em, latent=args.gamma_z)
    split = dataset.load_split(args.split, limit=args.limit)
    batches = batch_iterator(split, args.batch,
                             generator=torch.Generator().manual_seed(args.seed))
    tconf = TrainConfig(steps=args.steps, batch_size=args.batch,
                        learning_rate=args.lr, weights=weights,
                        seed=args.seed)

    trace = []

    def log(step, loss, parts):
        trace.append(loss)
        if (step + 1) % 250 == 0:
            print(f"step {step + 1}/{args.steps}: loss {loss:.5f} "
                  f"(diffusion {parts['diffusion']:.5f}, kl {parts['kl']:.4f})")

    train(model, batches, tconf, on_step=log)
    meta = {
        "variant": args.variant, "embedding": args.embedding,
        "steps": args.steps, "batch": args.batch, "lr": args.lr,
        "weights": weights.__dict__, "seed": args.seed,
        "csi_scale": dataset.csi_scale, "data": str(args.data),
        "final_loss": trace[-1] if trace else None,
    }
    _save_checkpoint(out / "model.pt", model, meta)
    with open(out / "run_summary.json", "w") as fh:
        json.dump({**meta, "loss_trace": trace[:: max(1, len(trace) // 200)]},
                  fh, indent=2)
    print(f"checkpoint written to {out / 'model.pt'}")
    return 0


def cmd_predict(args) -> int:
    dataset = SensingDataset(args.data)
    model, meta = load_checkpoint(args.model)
    model.eval()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = dataset.load_split(args.split, limit=args.limit)
    gen = torch.Generator().manual_seed(args.seed)
    with torch.no_grad():
        for row, idx in enumerate(split["indices"]):
            cloud = model.reconstruct(split["csi"][row:row + 1],
                                      split["bs_pos"][row:row + 1],
                                      split["ue_pos"][row:row + 1],
                                      num_points=args.points,
                                      generator=gen)[0]
            write_tensor(out / f"{idx:08d}.pred.bin",
                         cloud.numpy().astype(np.float64))
    with open(out / "run_summary.json", "w") as fh:
        json.dump({"method": f"genmv-{meta['variant']}", "split": args.split,
                   "points": args.points, "seed": args.seed,
                   "model": str(args.model)}, fh, indent=2)
    print(f"{len(split['indices'])} predictions written to {out}")
    return 0


def cmd_export_latents(args) -> int:
    dataset = SensingDataset(args.data)
    model, meta = load_checkpoint(args.model)
    model.eval()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = dataset.load_split(args.split, limit=args.limit)
    with torch.no_grad():
        latent = model.encode(split["csi"], split["bs_pos"], split["ue_pos"])
    rows = latent.mean.numpy().astype(np.float64)
    write_tensor(out / "latents.bin", rows)
    labels = [dataset.label(args.split, idx) for idx in split["indices"]]
    with open(out / "latent_labels.json", "w") as fh:
        json.dump({"split": args.split, "indices": split["indices"],
                   "labels": labels, "latent_dim": rows.shape[1],
                   "variant": meta["variant"]}, fh, indent=2)
    print(f"{rows.shape[0]} latent rows written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genmv", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    tr = subs.add_parser("train")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--variant", choices=VARIANTS, default="ivt")
    tr.add_argument("--embedding", choices=EMBEDDINGS, default="multiplicative")
    tr.add_argument("--split", default="train")
    tr.add_argument("--limit", type=int)
    tr.add_argument("--steps", type=int, default=1000)
    tr.add_argument("--batch", type=int, default=128)
    tr.add_argument("--lr", type=float, default=1e-4)
    tr.add_argument("--channel-dim", type=int, default=256)
    tr.add_argument("--latent-dim", type=int, default=128)
    tr.add_argument("--layers", type=int, default=6)
    tr.add_argument("--diffusion-steps", type=int, default=100)
    tr.add_argument("--noise-widths", type=int, nargs="+")
    tr.add_argument("--gamma-s", type=float, default=0.45)
    tr.add_argument("--gamma-em", type=float, default=0.05)
    tr.add_argument("--gamma-z", type=float, default=1e-4)
    tr.add_argument("--standard-loss", action="store_true")
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    pr = subs.add_parser("predict")
    pr.add_argument("--data", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--split", default="test")
    pr.add_argument("--limit", type=int)
    pr.add_argument("--points", type=int, default=1000)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_predict)

    ex = subs.add_parser("export-latents")
    ex.add_argument("--data", required=True)
    ex.add_argument("--model", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--split", default="test")
    ex.add_argument("--limit", type=int)
    ex.set_defaults(func=cmd_export_latents)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
