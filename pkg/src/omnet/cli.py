"""Command-line entry point: ``omnet <subcommand> ...``.

Subcommands: phantom, train, infer, postprocess, eval, params, dump-features.
Every run writes ``manifest.json`` into its output directory. Exit status is
0 on success, 1 on a domain error and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as omio
from . import tensor as T
from .backbone import ATTENTION_MODES, NetworkConfig, build, build_cascade, count_parameters
from .errors import EmptyDatasetError, OMNetError
from .inference import segment
from .metrics import evaluate, write_metrics_csv
from .phantom import PhantomSpec, generate, generate_dataset
from .postproc import postprocess
from .sampler import MODALITIES, brain_mask_from_intensities, normalize, prepare_case
from .tensor import Tensor
from .trainer import CurriculumSchedule, train_curriculum, train_mc_baseline

log = logging.getLogger("omnet")

OUTPUT_ENV = "OMNET_OUTPUT_DIR"
TRAIN_MODES = ("curriculum", "mc3", "om-net0", "om-netd")
VOLUME_EXT = ".omv"
LABEL_SUFFIX = "_seg.oml"


def _versions() -> dict:
    out = {"omnet": __version__, "python": platform.python_version(), "numpy": np.__version__}
    try:
        import scipy
        out["scipy"] = scipy.__version__
    except ImportError:  # pragma: no cover
        pass
    try:
        import torch
        out["torch"] = torch.__version__
    except ImportError:
        pass
    return out


def write_manifest(out_dir: Path, args: argparse.Namespace, config: dict, seeds: dict) -> Path:
    """Config echo, library versions and seeds, enough to repeat the run."""
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "arguments": echo,
        "config": config,
        "seeds": seeds,
        "versions": _versions(),
        "conv_backend": T.get_conv_backend(),
        "deterministic": bool(getattr(args, "deterministic", False)),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV)
    if not out:
        raise OMNetError(f"no output directory: pass --out or set {OUTPUT_ENV}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise OMNetError(f"{path}: invalid JSON ({exc})") from exc


def _case_names(data_dir: Path) -> list[str]:
    names = sorted(p.stem for p in Path(data_dir).glob("*" + VOLUME_EXT))
    if not names:
        raise EmptyDatasetError(f"no {VOLUME_EXT} volumes in {data_dir}")
    return names


def _load_case(data_dir: Path, name: str, with_labels: bool = True):
    vol = omio.read_volume(data_dir / f"{name}{VOLUME_EXT}")
    if vol.shape[-1] != len(MODALITIES):
        raise OMNetError(f"{name}: expected {len(MODALITIES)} modalities, got {vol.shape[-1]}")
    labels = None
    lab_path = data_dir / f"{name}{LABEL_SUFFIX}"
    if with_labels and lab_path.exists():
        labels = omio.read_labels(lab_path)
    return vol, labels


def _set_deterministic(flag: bool) -> None:
    if not flag:
        return
    try:
        import torch
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    except ImportError:
        pass


# ---------------------------------------------------------------- subcommands

def cmd_phantom(args) -> int:
    out = _out_dir(args)
    if args.spec:
        specs = [PhantomSpec.from_dict(_load_json(args.spec))]
        cases = [(specs[0], *generate(specs[0]))]
    else:
        cases = generate_dataset(args.count, seed=args.seed, shape=tuple(args.shape),
                                 empty_enhancing_fraction=args.empty_enhancing, noise_sigma=args.noise)
    for i, (spec, vol, labels, _) in enumerate(cases):
        name = f"{args.prefix}{i:03d}"
        omio.write_volume(out / f"{name}{VOLUME_EXT}", vol)
        omio.write_labels(out / f"{name}{LABEL_SUFFIX}", labels)
        omio.write_sidecar(out / f"{name}{VOLUME_EXT}", provenance={"generator": "phantom", "spec": spec.to_dict()})
    write_manifest(out, args, {"count": len(cases)}, {"seed": args.seed})
    print(f"wrote {len(cases)} phantoms to {out}")
    return 0


def _schedule(args, cfg: dict) -> CurriculumSchedule:
    values = CurriculumSchedule.desk().to_dict()
    values.update(cfg.get("schedule", {}))
    for key, flag in (("desk_scale", args.desk_scale), ("stage_epochs", args.stage_epochs),
                      ("lr0", args.lr), ("batch_per_task", args.batch)):
        if flag is not None:
            values[key] = flag
    mode = "curriculum" if args.mode == "mc3" else args.mode
    return CurriculumSchedule.for_mode(mode, **{k: v for k, v in values.items()
                                                if k not in ("curriculum", "transfer")})


def _network(args, cfg: dict) -> NetworkConfig:
    values = dict(cfg.get("network", {}))
    if args.attention is not None:
        values["attention"] = args.attention
    values.setdefault("seed", args.seed)
    return NetworkConfig.from_dict(values)


def cmd_train(args) -> int:
    _set_deterministic(args.deterministic)
    out = _out_dir(args)
    cfg = _load_json(args.config)
    net_cfg = _network(args, cfg)
    schedule = _schedule(args, cfg)
    cases = []
    for name in _case_names(Path(args.data)):
        vol, labels = _load_case(Path(args.data), name)
        if labels is None:
            raise OMNetError(f"{name}: training needs {name}{LABEL_SUFFIX}")
        cases.append(prepare_case(vol, labels, name=name))
    if args.mode == "mc3":
        model = build_cascade(net_cfg)
        result = train_mc_baseline(model, cases, schedule, seed=args.seed)
    else:
        model = build(net_cfg)
        result = train_curriculum(model, cases, schedule, seed=args.seed,
                                  prefetch=0 if args.deterministic else 2)
    config = {"kind": model.kind, "network": net_cfg.to_dict(), "schedule": schedule.to_dict(),
              "mode": args.mode}
    omio.save_checkpoint(out / "model.omw", config, model.state_dict())
    result.write_csv(out / "trace.csv")
    write_manifest(out, args, config, {"seed": args.seed, "network_seed": net_cfg.seed})
    print(f"trained {args.mode} ({net_cfg.attention}) for {len(result.trace)} steps; checkpoint {out / 'model.omw'}")
    return 0


def load_model(path):
    config, state = omio.load_checkpoint(path)
    if "network" not in config:
        raise OMNetError(f"{path}: checkpoint has no network config")
    net_cfg = NetworkConfig.from_dict(config["network"])
    model = build_cascade(net_cfg) if config.get("kind") == "cascade" else build(net_cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise OMNetError(f"{path}: {exc}") from exc
    return model, config


def cmd_infer(args) -> int:
    _set_deterministic(args.deterministic)
    out = _out_dir(args)
    model, config = load_model(args.model)
    data = Path(args.data)
    names = _case_names(data)
    for name in names:
        vol, _ = _load_case(data, name, with_labels=False)
        brain = brain_mask_from_intensities(vol)
        labels, probs = segment(model, normalize(vol, brain), batch_size=args.batch)
        omio.write_labels(out / f"{name}_pred.oml", labels)
        if args.save_probs:
            for task, p in enumerate(probs, start=1):
                omio.write_volume(out / f"{name}_prob{task}{VOLUME_EXT}", p)
    write_manifest(out, args, config, {})
    print(f"segmented {len(names)} volumes into {out}")
    return 0


def cmd_postprocess(args) -> int:
    out = _out_dir(args)
    data, pred_dir = Path(args.data), Path(args.pred)
    reports = {}
    for name in _case_names(data):
        pred_path = pred_dir / f"{name}_pred.oml"
        if not pred_path.exists():
            raise OMNetError(f"missing prediction {pred_path}")
        vol, _ = _load_case(data, name, with_labels=False)
        labels, report = postprocess(omio.read_labels(pred_path), vol, brain_mask_from_intensities(vol),
                                     step1=not args.no_step1, step2=not args.no_step2)
        omio.write_labels(out / f"{name}_pp.oml", labels)
        reports[name] = report
    (out / "postprocess_report.json").write_text(json.dumps(reports, indent=2, default=int))
    write_manifest(out, args, {"step1": not args.no_step1, "step2": not args.no_step2}, {})
    print(f"post-processed {len(reports)} predictions into {out}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    results = {}
    for name in _case_names(gt_dir):
        gt_path, pred_path = gt_dir / f"{name}{LABEL_SUFFIX}", pred_dir / f"{name}{args.suffix}.oml"
        if not gt_path.exists() or not pred_path.exists():
            raise OMNetError(f"{name}: need both {gt_path} and {pred_path}")
        spacing = omio.read_sidecar(gt_dir / f"{name}{VOLUME_EXT}").get("spacing", [1.0, 1.0, 1.0])
        results[name] = evaluate(omio.read_labels(pred_path), omio.read_labels(gt_path), spacing)
    csv_path = out / f"metrics_{args.layout}.csv"
    write_metrics_csv(results, csv_path, layout=args.layout)
    write_manifest(out, args, {"layout": args.layout}, {})
    print(f"wrote {csv_path}")
    return 0


def parameter_report(net_cfg: NetworkConfig) -> dict:
    """Parameter counts for MC1, MC3 (identical members) and OM-Net."""
    identical = build_cascade(net_cfg, per_task_classes=False)
    mc1 = count_parameters(identical.nets[0])
    omnet = build(net_cfg)
    heads = sum(count_parameters(h) for h in omnet.heads[1:])
    return {"attention": net_cfg.attention, "mc1": mc1, "mc3": count_parameters(identical),
            "mc3_over_mc1": count_parameters(identical) / mc1,
            "omnet": count_parameters(omnet), "omnet_minus_mc1": count_parameters(omnet) - mc1,
            "extra_heads": heads}


def cmd_params(args) -> int:
    cfg = _load_json(args.config)
    net_cfg = _network(args, cfg)
    report = parameter_report(net_cfg)
    print(json.dumps(report, indent=2))
    if args.out or os.environ.get(OUTPUT_ENV):
        out = _out_dir(args)
        (out / "params.json").write_text(json.dumps(report, indent=2))
        write_manifest(out, args, net_cfg.to_dict(), {"network_seed": net_cfg.seed})
    return 0


def cmd_dump_features(args) -> int:
    """Per-channel task-feature slices of one patch, one OMV1 file per channel."""
    out = _out_dir(args)
    model, config = load_model(args.model)
    if model.kind != "omnet":
        raise OMNetError("dump-features needs an OM-Net checkpoint")
    vol = omio.read_volume(args.input)
    brain = brain_mask_from_intensities(vol)
    x = normalize(vol, brain)
    patch = model.config.patch
    center = args.center or [n // 2 for n in x.shape[:3]]
    corner = [min(max(c - p // 2, 0), n - p) for c, p, n in zip(center, patch, x.shape[:3])]
    if any(c < 0 for c in corner):
        raise OMNetError(f"volume {x.shape[:3]} smaller than patch {patch}")
    crop = x[tuple(slice(c, c + p) for c, p in zip(corner, patch))][None]
    head = model.heads[args.task - 1]
    with T.no_grad():
        feats = model.features(Tensor(crop))
        task_feats = head.task_features(feats).data[0]
        importance = None
        if config["network"]["attention"] == "cga" and args.task > 1:
            guidance = T.softmax_channels(model.task_logits(args.task - 1, feats)).data
            m_t, m_n = head.importance(feats, guidance)
            importance = {"m_t": m_t.data[0].tolist(), "m_n": m_n.data[0].tolist()}
    z = patch[2] // 2 if args.slice is None else args.slice
    for ch in range(task_feats.shape[-1]):
        omio.write_volume(out / f"task{args.task}_ch{ch:02d}{VOLUME_EXT}", task_feats[:, :, z:z + 1, ch:ch + 1])
    meta = {"task": args.task, "corner": corner, "slice": z, "channels": int(task_feats.shape[-1]),
            "importance": importance}
    (out / "features.json").write_text(json.dumps(meta, indent=2))
    write_manifest(out, args, config, {})
    print(f"wrote {task_feats.shape[-1]} channel slices to {out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, help=f"output directory (default: ${OUTPUT_ENV})")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = common(sub.add_parser("phantom", help="generate synthetic phantom volumes"))
    sp.add_argument("--count", type=int, default=5)
    sp.add_argument("--shape", type=int, nargs=3, default=[64, 64, 32], metavar=("W", "H", "L"))
    sp.add_argument("--noise", type=float, default=0.15)
    sp.add_argument("--empty-enhancing", type=float, default=0.0, help="fraction of cases without enhancing tumour")
    sp.add_argument("--spec", type=Path, help="JSON phantom spec (renders a single case)")
    sp.add_argument("--prefix", default="case_")
    sp.set_defaults(func=cmd_phantom)

    sp = common(sub.add_parser("train", help="train OM-Net or the model cascade"))
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--mode", choices=TRAIN_MODES, default="curriculum")
    sp.add_argument("--attention", choices=ATTENTION_MODES)
    sp.add_argument("--config", type=Path, help='JSON with optional "network" and "schedule" objects')
    sp.add_argument("--desk-scale", type=float)
    sp.add_argument("--stage-epochs", type=int, nargs=3)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch", type=int, help="patches per task per step")
    sp.add_argument("--deterministic", action="store_true", help="single producer, single-threaded kernels")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("infer", help="overlap-tile inference and cascade fusion"))
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--batch", type=int, default=1, help="patches per forward call; 1 keeps results batch-invariant")
    sp.add_argument("--save-probs", action="store_true")
    sp.add_argument("--deterministic", action="store_true")
    sp.set_defaults(func=cmd_infer)

    sp = common(sub.add_parser("postprocess", help="small-cluster removal and edema relabelling"))
    sp.add_argument("--pred", type=Path, required=True, help="directory of <case>_pred.oml files")
    sp.add_argument("--data", type=Path, required=True, help="directory of the input volumes")
    sp.add_argument("--no-step1", action="store_true")
    sp.add_argument("--no-step2", action="store_true")
    sp.set_defaults(func=cmd_postprocess)

    sp = common(sub.add_parser("eval", help="per-region metric CSV"))
    sp.add_argument("--pred", type=Path, required=True)
    sp.add_argument("--gt", type=Path, required=True, help="directory with volumes and _seg.oml labels")
    sp.add_argument("--suffix", default="_pp", help="prediction file suffix, e.g. _pred or _pp")
    sp.add_argument("--layout", choices=("overlap", "distance"), default="overlap")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("params", help="parameter count report"))
    sp.add_argument("--attention", choices=ATTENTION_MODES)
    sp.add_argument("--config", type=Path)
    sp.set_defaults(func=cmd_params)

    sp = common(sub.add_parser("dump-features", help="export per-channel task-feature slices"))
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--task", type=int, choices=(1, 2, 3), default=2)
    sp.add_argument("--center", type=int, nargs=3)
    sp.add_argument("--slice", type=int)
    sp.set_defaults(func=cmd_dump_features)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OMNetError, OSError, ValueError) as exc:
        print(f"omnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
