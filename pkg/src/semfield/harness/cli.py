"""Command-line entry point.

Verbs: collect, train, eval, heatmap, gradcheck. Every verb takes
``--config`` (flat key = value file; omitted means all defaults) and
``--seed``; verbs that write artifacts take ``--out``. Outputs are plain
files: GDPE episodes + JSON manifest, GDPC checkpoints, CSV/JSON reports
with PNG figures, and PPM heatmaps.
"""

from __future__ import annotations

import argparse
import sys

from .collect import collect_demos
from .config import load_config
from .evaluate import evaluate
from .gradcheck import run_gradcheck
from .heatmap import export_heatmap
from .train import train_policy

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semfield",
        description="Semantic-field diffusion policy: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=0)
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("collect", help="record expert demos and references")
    common(p)
    p.add_argument(
        "--features-dir",
        default=None,
        help="directory of raw float32 feature files replacing the renderer's",
    )

    p = sub.add_parser("train", help="train the policy on a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--ablate-semantics", action="store_true")

    p = sub.add_parser("eval", help="closed-loop evaluation report")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--refs", required=True, help="references.json from collect")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--ablate-semantics", action="store_true")
    p.add_argument(
        "--expert", action="store_true", help="run the scripted expert as the policy"
    )

    p = sub.add_parser("heatmap", help="per-channel semantic heatmaps")
    common(p)
    p.add_argument("--refs", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p, out_required=False)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config = load_config(args.config)

    if args.verb == "collect":
        dataset = collect_demos(
            config, args.out, seed=args.seed, features_dir=args.features_dir
        )
        print(f"episodes={config.n_demos} dataset={dataset}")
        return 0

    if args.verb == "train":
        summary = train_policy(
            config,
            args.dataset,
            args.out,
            seed=args.seed,
            ablate=True if args.ablate_semantics else None,
        )
        print(
            f"checkpoint={summary['checkpoint']} "
            f"loss_first={summary['loss_first']:.4f} "
            f"loss_final={summary['loss_final']:.4f} "
            f"ablate={str(summary['ablate_semantics']).lower()}"
        )
        return 0

    if args.verb == "eval":
        episodes = args.episodes if args.episodes is not None else config.eval_episodes
        report = evaluate(
            config,
            args.checkpoint,
            args.refs,
            args.split,
            episodes,
            args.out,
            seed=args.seed,
            ablate=True if args.ablate_semantics else None,
            expert=args.expert,
        )
        rate = "undefined" if report["rate_undefined"] else f"{report['success_rate']:.3f}"
        print(
            f"split={report['split']} episodes={len(report['episodes'])} "
            f"success_rate={rate} report={args.out}/report.json"
        )
        return 0

    if args.verb == "heatmap":
        out = export_heatmap(config, args.seed, args.refs, args.out)
        print(f"channels={len(out['channels'])} overview={out['overview']}")
        return 0

    if args.verb == "gradcheck":
        result = run_gradcheck(seed=args.seed)
        print(f"encoder_max_rel_err={result['encoder_max_rel_err']:.3e}")
        print(f"denoiser_max_rel_err={result['denoiser_max_rel_err']:.3e}")
        print(f"negative_control_err={result['negative_control_err']:.3e}")
        print(f"passed={str(result['passed']).lower()}")
        return 0 if result["passed"] else 1

    raise AssertionError("unreachable verb")


if __name__ == "__main__":
    sys.exit(main())
