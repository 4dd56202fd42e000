"""Command-line entry points.

Subcommands: gradcheck, params, train, eval, export, ablate. Config files
are JSON mirroring the TrainConfig / DecoderConfig field names; metric
reports are JSON with optional-absent keys; loss curves are CSV.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .decoder import VARIANTS, build_variant, param_count
from .fusion import attention_heatmap
from .gradsuite import run_suite
from .metrics import mask_to_bbox
from .rng import Rng
from .stubs import build_stub_weights, encode_sample
from .synth import gen_sample
from .tensorio import write_pgm, write_ppm
from .train import (
    config_from_dict,
    evaluate,
    load_model,
    predict_sample,
    save_model,
    train,
    write_curve,
)


def _load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, tol=args.tol)
    for name, err, ok in results:
        print(f"{name:>18s}: rel-err {err:.3e}  {'ok' if ok else 'FAIL'}")
    failed = [name for name, _, ok in results if not ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} operations within tol {args.tol:g}")
    return 0


def cmd_params(args) -> int:
    cfg = _load_config(args.config)
    decoder_cfg = cfg.decoder
    if args.variant is not None:
        decoder_cfg = dataclasses.replace(decoder_cfg, variant=args.variant)
    params = build_variant(decoder_cfg, Rng(cfg.seed))
    print(param_count(params))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    dec_params, rej_params, curve = train(cfg, log=lambda msg: print(msg, flush=True))
    save_model(args.out, dec_params, rej_params, cfg)
    print(f"checkpoint written to {args.out}")
    if args.curve:
        write_curve(args.curve, curve)
        print(f"loss curve written to {args.curve}")
    return 0


def cmd_eval(args) -> int:
    dec_params, rej_params, cfg = load_model(args.ckpt)
    report, _ = evaluate(dec_params, rej_params, cfg, args.n, args.seed)
    text = report.to_json()
    with open(args.report, "w", encoding="ascii") as f:
        f.write(text + "\n")
    print(text)
    return 0


def cmd_export(args) -> int:
    dec_params, rej_params, cfg = load_model(args.ckpt)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    sample = gen_sample(Rng(args.seed), cfg.generator)
    stub_w = build_stub_weights(cfg.generator, cfg.decoder.c, cfg.decoder.c_llm)
    feats = encode_sample(sample, stub_w, cfg.decoder.grid_detail)
    pred, flags = predict_sample(feats, dec_params, rej_params, cfg.decoder)

    img = np.round(sample.image.data.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    write_ppm(outdir / "image.ppm", img)
    for i, probs in enumerate(pred.per_token_probs):
        write_pgm(outdir / f"pred_mask_{i:02d}.pgm", np.round(probs.data * 255.0))
    for i, gt in enumerate(sample.gt_masks):
        write_pgm(outdir / f"gt_mask_{i:02d}.pgm", gt.astype(np.uint8) * 255)

    if pred.fusion_attn is not None:
        # query at the predicted-mask centroid patch, center fallback
        g1 = cfg.decoder.grid_detail
        box = mask_to_bbox(pred.merged_binary)
        if box is not None:
            scale_ = cfg.decoder.final_mask_hw // g1
            qy = min(((box[1] + box[3]) // 2) // scale_, g1 - 1)
            qx = min(((box[0] + box[2]) // 2) // scale_, g1 - 1)
        else:
            qy = qx = g1 // 2
        g2 = cfg.decoder.grid_semantic
        heat = attention_heatmap(pred.fusion_attn, qy * g1 + qx, (g2, g2))
        write_pgm(outdir / "attention.pgm", heat)

    print(f"wrote {len(pred.per_token_probs)} predicted masks to {outdir}")
    return 0


def cmd_ablate(args) -> int:
    base = _load_config(args.config)
    report: dict = {}
    for variant in VARIANTS:
        runs = []
        for i in range(args.seeds):
            cfg = dataclasses.replace(
                base,
                seed=base.seed + 1000 * i,
                decoder=dataclasses.replace(base.decoder, variant=variant),
            )
            dec_params, rej_params, _ = train(cfg)
            metrics, _ = evaluate(dec_params, rej_params, cfg, args.n, cfg.seed + 1)
            runs.append({k: v for k, v in vars(metrics).items() if v is not None})
            print(f"{variant} seed {cfg.seed}: {runs[-1]}", flush=True)
        keys = sorted({k for r in runs for k in r})
        mean = {k: float(np.mean([r[k] for r in runs if k in r])) for k in keys}
        report[variant] = {"mean": mean, "runs": runs}
    text = json.dumps(report, sort_keys=True, indent=2)
    with open(args.report, "w", encoding="ascii") as f:
        f.write(text + "\n")
    print(f"ablation report written to {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("params", help="print the exact learnable parameter count")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", choices=list(VARIANTS), default=None)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("train", help="train a decoder on synthetic tasks")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on held-out samples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export", help="write sample image, masks, and attention heatmap")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("ablate", help="train and score all fusion variants")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
