"""``taig train|attack|eval|ablate --config <path> [--out <dir>] [--seed <n>]``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.

Layout under the output directory::

    models/<arch>.taignet          trained zoo
    train_log.json                 final accuracies and config echo
    attacks/inputs.{f64,json}      the evaluation images (labels, targets in sidecar)
    attacks/<name>.{f64,json}      adversarial batch + per-image surrogate success flags
    reports/transfer.csv           one row per surrogate x victim x epsilon x attack
    reports/perceptual.csv         RMSE / L0 / PSNR per attack
    reports/sign_hist.json         sign-disagreement histograms
    reports/ablation_<param>.csv   sweep table (ablate)
    reports/run.json               metadata for the last command
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from taig import attacks, data, evaluation, models, reports
from taig.attribution import PathSpec
from taig.config import ConfigError, RunConfig, derive_seed, load

log = logging.getLogger("taig")


def _out(cfg: RunConfig, out: str | None) -> Path:
    if out:
        return Path(out)
    base = Path(cfg.out)
    if not base.is_absolute() and cfg.path is not None:
        base = cfg.path.parent / base
    return base


def _apply_overrides(cfg: RunConfig, seed: int | None) -> RunConfig:
    return cfg if seed is None else replace(cfg, seed=seed)


def build_datasets(cfg: RunConfig) -> tuple[data.Dataset, data.Dataset]:
    d = cfg.data
    if d.kind == "idx":
        base = cfg.path.parent if cfg.path else Path(".")
        train = data.load_idx(base / d.train_images, base / d.train_labels, d.n_classes, "train")
        test = data.load_idx(base / d.test_images, base / d.test_labels, d.n_classes, "test")
        return train, test
    seed = derive_seed(cfg.seed, "data")
    train = data.gen_blobs(data.BlobConfig(d.n_classes, d.samples_per_class, d.input_shape,
                                           d.separation, d.sigma, seed, d.smooth), "train")
    test = data.gen_blobs(data.BlobConfig(d.n_classes, d.test_samples_per_class, d.input_shape,
                                          d.separation, d.sigma, seed, d.smooth), "test")
    return train, test


def _model_path(out: Path, arch: str) -> Path:
    return out / "models" / f"{arch}.taignet"


def load_zoo(cfg: RunConfig, out: Path) -> dict[str, models.ReluNet]:
    zoo = {}
    for arch in cfg.zoo.archs:
        p = _model_path(out, arch)
        if not p.exists():
            raise FileNotFoundError(f"model file {p} is missing; run 'taig train' first")
        zoo[arch] = models.load(p)
    return zoo


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    train, test = build_datasets(cfg)
    accuracies = {}
    for i, arch in enumerate(cfg.zoo.archs):
        seed = derive_seed(cfg.seed, "model", i)
        net = models.init(arch, train.input_shape, train.n_classes, seed)
        tc = models.TrainConfig(cfg.zoo.lr, cfg.zoo.epochs, cfg.zoo.batch_size, seed,
                                cfg.zoo.weight_decay, cfg.zoo.momentum)
        net, acc = models.train(net, train, tc, heldout=test, log=log.debug)
        path = _model_path(out, arch)
        path.parent.mkdir(parents=True, exist_ok=True)
        models.save(net, path)
        accuracies[arch] = acc
        log.info("trained %s: held-out accuracy %.4f -> %s", arch, acc, path)
    meta = {"command": "train", "version": reports.VERSION, "accuracies": accuracies, "config": cfg.echo()}
    reports.write_json(out / "train_log.json", meta)
    return meta


def evaluation_inputs(cfg: RunConfig, zoo: dict) -> data.Dataset:
    _, test = build_datasets(cfg)
    return data.subsample_correct(test, list(zoo.values()), cfg.eval.n_images, derive_seed(cfg.seed, "subsample"))


def cmd_attack(cfg: RunConfig, out: Path) -> dict:
    if cfg.eval is None:
        raise ConfigError("attack needs an [eval] section naming the surrogate")
    if not cfg.attacks:
        raise ConfigError("no [attack.<name>] sections")
    zoo = load_zoo(cfg, out)
    inputs = evaluation_inputs(cfg, zoo)
    targets = evaluation.pick_targets(inputs.labels, inputs.n_classes, derive_seed(cfg.seed, "targets"))
    reports.save_dump(out / "attacks" / "inputs", inputs.images, labels=inputs.labels, targets=targets)
    surrogate = zoo[cfg.eval.surrogate]
    summary = {}
    for i, att in enumerate(cfg.attacks):
        acfg = att.build(derive_seed(cfg.seed, "attack:" + att.name))
        goal = inputs.labels if acfg.mode == "untargeted" else targets
        res = attacks.run(surrogate, inputs.images, goal, acfg)
        reports.save_dump(out / "attacks" / att.name, res.adversarial, attack=att.name, method=att.method,
                          surrogate=cfg.eval.surrogate, config=acfg.to_dict(), success=res.success)
        summary[att.name] = float(np.mean(res.success))
        log.info("%s on %s: surrogate success %.3f", att.name, cfg.eval.surrogate, summary[att.name])
    reports.write_json(out / "reports" / "run.json", {"command": "attack", "version": reports.VERSION,
                                                      "surrogate_success": summary, "config": cfg.echo()})
    return summary


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    if cfg.eval is None:
        raise ConfigError("missing [eval] section")
    zoo = load_zoo(cfg, out)
    images, meta = reports.load_dump(out / "attacks" / "inputs")
    labels, targets = np.asarray(meta["labels"]), np.asarray(meta["targets"])
    victims = {v: zoo[v] for v in cfg.eval.victims}
    transfer_rows, perceptual_rows, averages = [], [], {}
    for att in cfg.attacks:
        stem = out / "attacks" / att.name
        if not stem.with_suffix(".json").exists():
            raise FileNotFoundError(f"no dump for attack {att.name!r}; run 'taig attack' first")
        adv, ameta = reports.load_dump(stem)
        goal = labels if att.mode == "untargeted" else targets
        matrix = evaluation.TransferMatrix(att.name, att.epsilon, cfg.eval.surrogate, [], [], [], [])
        for tag, net in victims.items():
            matrix.victims.append(tag)
            matrix.rates.append(evaluation.asr(net, images, adv, goal, att.mode))
            matrix.counts.append(len(goal))
            matrix.is_surrogate.append(tag == cfg.eval.surrogate)
        transfer_rows += [dict(r, version=reports.VERSION) for r in matrix.rows()]
        averages[att.name] = matrix.average
        if "perceptual" in cfg.eval.metrics:
            rep = evaluation.perceptual(images, adv)
            perceptual_rows.append({"attack": att.name, "epsilon": att.epsilon, **rep.summary,
                                    "n": len(adv), "version": reports.VERSION})
    reports.write_csv(out / "reports" / "transfer.csv", transfer_rows, reports.TRANSFER_COLUMNS)
    if "perceptual" in cfg.eval.metrics:
        reports.write_csv(out / "reports" / "perceptual.csv", perceptual_rows, reports.PERCEPTUAL_COLUMNS)
    if "sign_hist" in cfg.eval.metrics:
        sur = zoo[cfg.eval.surrogate]
        ds = data.Dataset(images, labels, sur.n_classes, "test")
        sources = ["gradient", PathSpec("straight", S=30),
                   PathSpec("random", S=1, E=30, tau=cfg.eval.sign_tau, seed=derive_seed(cfg.seed, "sign_hist"))]
        hists = evaluation.sign_hist(sur, ds, sources)
        reports.write_json(out / "reports" / "sign_hist.json", {
            "version": reports.VERSION, "surrogate": cfg.eval.surrogate,
            "histograms": {t: {"mean": h.mean, "counts": h.counts, "edges": h.edges} for t, h in hists.items()},
        })
    meta = {"command": "eval", "version": reports.VERSION, "black_box_average": averages, "config": cfg.echo()}
    reports.write_json(out / "reports" / "run.json", meta)
    return meta


def _ablation_config(att, param: str, value: float, seed: int) -> attacks.AttackConfig:
    base = att.build(seed)
    src = base.source
    if src.path is None:
        raise ConfigError(f"attack {att.name!r} has no integration path to ablate")
    if param == "E":
        if src.variant != "rig":
            raise ConfigError("E can only be swept for a random-path attack")
        path = replace(src.path, E=int(value))
    else:
        path = replace(src.path, S=int(value))
    return replace(base, source=replace(src, path=path))


def trend_flag(values, means) -> dict:
    """Spearman correlation of sweep means against the swept value."""
    if len(values) < 2 or np.ptp(means) == 0:
        rho = 0.0
    else:
        rho = float(spearmanr(values, means).correlation)
    return {"spearman": rho, "non_decreasing": rho >= 0, "range": float(np.ptp(means)) if len(means) else 0.0}


def cmd_ablate(cfg: RunConfig, out: Path) -> dict:
    if cfg.ablate is None:
        raise ConfigError("missing [ablate] section")
    zoo = load_zoo(cfg, out)
    inputs = evaluation_inputs(cfg, zoo)
    att = next(a for a in cfg.attacks if a.name == cfg.ablate.attack)
    surrogate = zoo[cfg.eval.surrogate]
    victims = [zoo[v] for v in cfg.eval.victims if v != cfg.eval.surrogate]
    if not victims:
        raise ConfigError("ablation needs at least one victim other than the surrogate")
    targets = evaluation.pick_targets(inputs.labels, inputs.n_classes, derive_seed(cfg.seed, "targets"))
    goal = inputs.labels if att.mode == "untargeted" else targets
    rows, means = [], []
    for value in cfg.ablate.values:
        per_seed = []
        for s in range(cfg.ablate.seeds):
            acfg = _ablation_config(att, cfg.ablate.param, value, derive_seed(cfg.seed, "ablate:" + att.name, s))
            res = attacks.run(surrogate, inputs.images, goal, acfg)
            per_seed.append(np.mean([evaluation.asr(v, inputs.images, res.adversarial, goal, att.mode)
                                     for v in victims]))
        means.append(float(np.mean(per_seed)))
        rows.append({"attack": att.name, "param": cfg.ablate.param, "value": value, "mean_asr": means[-1],
                     "std_asr": float(np.std(per_seed)), "seeds": cfg.ablate.seeds, "n": len(goal),
                     "version": reports.VERSION})
        log.info("%s %s=%g: mean black-box ASR %.4f", att.name, cfg.ablate.param, value, means[-1])
    reports.write_csv(out / "reports" / f"ablation_{cfg.ablate.param}.csv", rows, reports.ABLATION_COLUMNS)
    meta = {"command": "ablate", "version": reports.VERSION, "param": cfg.ablate.param,
            "trend": trend_flag(cfg.ablate.values, means), "config": cfg.echo()}
    reports.write_json(out / "reports" / f"ablation_{cfg.ablate.param}.json", meta)
    return meta


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taig", description="Integrated-gradients transfer attacks on small ReLU nets.")
    p.add_argument("command", choices=sorted(COMMANDS), help="pipeline stage to run")
    p.add_argument("--config", required=True, help="path to the INI run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides [run] out)")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides [run] seed)")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch training loss")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load(args.config), args.seed)
        COMMANDS[args.command](cfg, _out(cfg, args.out))
    except ConfigError as exc:
        print(f"taig: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime-failure exit code
        print(f"taig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
