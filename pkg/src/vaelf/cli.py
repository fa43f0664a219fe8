"""``vaelf`` command line: gen-synth, mask, train, impute, eval, compare, grad-check."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import baseline, config, data, gradcheck, metrics, trainer, vae

log = logging.getLogger("vaelf")

VAE_NAME = "vae-lf"
LFA_NAME = "mf-lfa"
MEAN_NAME = "mean"
ORACLE_NAME = "oracle"


def _write_summary(out: Path, command: str, cfg: config.RunConfig, **fields):
    out.mkdir(parents=True, exist_ok=True)
    summary = {"command": command, "format_version": config.FORMAT_VERSION, "config": cfg.to_dict()}
    summary.update(fields)
    (out / f"{command}.summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def load_source(cfg: config.RunConfig) -> tuple[data.HdiTensor, str]:
    if cfg.manifest is not None:
        return data.load_manifest(cfg.manifest), Path(cfg.manifest).parent.name or "dataset"
    return data.generate_synthetic(seed=cfg.seeds.data, spec=cfg.synthetic), "synthetic"


def thin(raw: data.HdiTensor, cfg: config.RunConfig) -> data.HdiTensor:
    """Apply the configured density. A density of 1.0, or one that matches
    the data's own observed count, keeps the observed set as it is."""
    want = math.floor(cfg.density * raw.values.size)
    if cfg.density < 1.0 and want != raw.n_observed:
        raw = data.apply_sparsity(raw, cfg.density, cfg.seeds.data)
    return raw


def prepare(cfg: config.RunConfig):
    """Load, thin to the configured density, normalize and split; returns ``(tensor, split, label)``."""
    raw, source = load_source(cfg)
    t = data.normalize(thin(raw, cfg))
    split = data.split_entries(t, cfg.seeds.split)
    return t, split, f"{source}-d{cfg.density:g}"


def _vae_predictor(p: vae.VaeParams, t: data.HdiTensor):
    return lambda positions: trainer.predict_at(p, t, positions)


# --- commands -------------------------------------------------------------------


def cmd_gen_synth(cfg: config.RunConfig, args) -> int:
    if cfg.synthetic is None:
        raise config.ConfigError("dataset.synthetic: gen-synth needs a synthetic dataset block")
    t = data.generate_synthetic(seed=cfg.seeds.data, spec=cfg.synthetic)
    out = Path(cfg.out) / "data"
    data.save_dataset(t, out, extra={"generator": cfg.to_dict()["dataset"]["synthetic"], "seed": cfg.seeds.data})
    _write_summary(out, "gen-synth", cfg, shape=list(t.shape), n_observed=t.n_observed)
    print(f"shape k={t.k} N={t.n_days} M={t.m_slots}  |observed|={t.n_observed}  -> {out / 'manifest.json'}")
    return 0


def cmd_mask(cfg: config.RunConfig, args) -> int:
    raw, _ = load_source(cfg)
    masked = thin(raw, cfg)
    out = Path(cfg.out) / "masked"
    data.save_dataset(masked, out, extra={"density": cfg.density, "seed": cfg.seeds.data})
    _write_summary(out, "mask", cfg, shape=list(masked.shape), n_observed=masked.n_observed)
    print(f"density={cfg.density:g}  |observed|={masked.n_observed} of {masked.values.size}  -> {out / 'manifest.json'}")
    return 0


def cmd_train(cfg: config.RunConfig, args) -> int:
    t, split, label = prepare(cfg)
    result = trainer.train(t, split, cfg.train)
    report = metrics.evaluate_model(_vae_predictor(result.params, t), t, split, VAE_NAME, label, raw=args.raw)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    vae.save_checkpoint(out / "vae.ckpt", result.params, seed=cfg.seeds.model, adam=result.adam,
                        extra={"best_epoch": result.best_epoch})
    trainer.write_epoch_csv(out / "epochs.csv", result.history)
    best = result.history[result.best_epoch - 1]
    _write_summary(out, "train", cfg, dataset=label, best_epoch=result.best_epoch, epochs_run=len(result.history),
                   best_valid_rmse=best.valid_rmse, best_valid_mae=best.valid_mae, test=json.loads(report.to_json()))
    print(f"{label}: best epoch {result.best_epoch}/{len(result.history)}  valid_rmse={best.valid_rmse:.4f}  "
          f"test_rmse={report.rmse:.4f}  test_mae={report.mae:.4f} ({report.scale})")
    return 0


def cmd_impute(cfg: config.RunConfig, args) -> int:
    t, _, label = prepare(cfg)
    ckpt = Path(args.checkpoint or Path(cfg.out) / "vae.ckpt")
    p, _, _ = vae.load_checkpoint(ckpt, input_dim=t.k * t.n_days)
    positions, values = trainer.impute(p, t)
    if args.raw:
        values = data.denormalize(t, positions, values)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "imputed.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "day", "slot", "value"])
        for (c, n, m), v in zip(positions.tolist(), values.tolist()):
            w.writerow([c, n, m, repr(v)])
    _write_summary(out, "impute", cfg, dataset=label, checkpoint=str(ckpt), rows=len(values),
                   scale="raw" if args.raw else "normalized")
    print(f"{label}: imputed {len(values)} missing entries -> {out / 'imputed.csv'}")
    return 0


def _write_reports(out: Path, reports: list[metrics.MetricReport], csv_name: str):
    digests = {r.omega_sha256 for r in reports}
    if len(digests) != 1:
        raise RuntimeError("models were evaluated on different test sets")
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        (out / f"report_{r.model_name}.json").write_text(r.to_json() + "\n")
    metrics.write_report_csv(out / csv_name, reports)


def cmd_eval(cfg: config.RunConfig, args) -> int:
    t, split, label = prepare(cfg)
    predictors = {}
    if args.vae:
        p, _, _ = vae.load_checkpoint(args.vae, input_dim=t.k * t.n_days)
        predictors[VAE_NAME] = _vae_predictor(p, t)
    if args.lfa:
        f = baseline.load_factors(args.lfa, t)
        predictors[LFA_NAME] = lambda pos: baseline.lfa_predict(f, pos)
    if args.mean:
        predictors[MEAN_NAME] = lambda pos: baseline.mean_impute(t, split, pos)
    if args.oracle:
        predictors[ORACLE_NAME] = lambda pos: t.at(pos)
    if not predictors:
        raise config.ConfigError("eval: give at least one of --vae, --lfa, --mean, --oracle")
    reports = [metrics.evaluate_model(fn, t, split, name, label, raw=args.raw) for name, fn in predictors.items()]
    out = Path(cfg.out)
    _write_reports(out, reports, "report.csv")
    _write_summary(out, "eval", cfg, dataset=label, omega_sha256=reports[0].omega_sha256,
                   reports=[json.loads(r.to_json()) for r in reports])
    for r in sorted(reports, key=lambda r: r.model_name):
        print(f"{r.model_name:>8}  rmse={r.rmse:.4f}  mae={r.mae:.4f}  n={r.n}  ({r.scale})")
    return 0


def compare_reports(reports: list[metrics.MetricReport], reference: str = VAE_NAME) -> list[dict]:
    return metrics.improvement_table(reports, reference)


def cmd_compare(cfg: config.RunConfig, args) -> int:
    t, split, label = prepare(cfg)
    result = trainer.train(t, split, cfg.train)
    factors = baseline.lfa_train(t, split, cfg.lfa)
    predictors = {
        VAE_NAME: _vae_predictor(result.params, t),
        LFA_NAME: lambda pos: baseline.lfa_predict(factors, pos),
        MEAN_NAME: lambda pos: baseline.mean_impute(t, split, pos),
    }
    reports = [metrics.evaluate_model(fn, t, split, name, label, raw=args.raw) for name, fn in predictors.items()]
    rows = compare_reports(reports)
    out = Path(cfg.out)
    _write_reports(out, reports, "compare.csv")
    metrics.write_improvement_csv(out / "improvement.csv", rows)
    vae.save_checkpoint(out / "vae.ckpt", result.params, seed=cfg.seeds.model, adam=result.adam,
                        extra={"best_epoch": result.best_epoch})
    baseline.save_factors(out / "lfa.ckpt", factors, seed=cfg.seeds.model)
    trainer.write_epoch_csv(out / "epochs.csv", result.history)
    _write_summary(out, "compare", cfg, dataset=label, omega_sha256=reports[0].omega_sha256,
                   reports=[json.loads(r.to_json()) for r in reports], improvement=rows)
    for r in sorted(reports, key=lambda r: r.model_name):
        print(f"{r.model_name:>8}  rmse={r.rmse:.4f}  mae={r.mae:.4f}  n={r.n}  ({r.scale})")
    for row in rows:
        if row["versus"] != VAE_NAME:
            print(f"{VAE_NAME} vs {row['versus']}: rmse {row['rmse_improvement_pct']:.2f}% lower, "
                  f"mae {row['mae_improvement_pct']:.2f}% lower")
    return 0


def cmd_grad_check(cfg: config.RunConfig, args) -> int:
    report = gradcheck.run(args.n_configs, seed=cfg.seeds.model, corrupt=args.corrupt,
                           strict_mu_relu=cfg.train.strict_mu_relu)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "mask": cmd_mask,
    "train": cmd_train,
    "impute": cmd_impute,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from resetting flags given before the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="run configuration JSON file")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--raw", action="store_true", help="report values in physical units")
    common.add_argument("--seed-data", type=int)
    common.add_argument("--seed-split", type=int)
    common.add_argument("--seed-model", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vaelf", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-synth", "mask", "train", "compare"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("impute", parents=[common])
    p.add_argument("--checkpoint", help="VAE checkpoint (default: <out>/vae.ckpt)")
    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--vae", help="VAE checkpoint")
    p.add_argument("--lfa", help="MF checkpoint")
    p.add_argument("--mean", action="store_true", help="include the per-channel mean imputer")
    p.add_argument("--oracle", action="store_true", help="include a predictor that returns the truth")
    p = sub.add_parser("grad-check", parents=[common])
    p.add_argument("--n-configs", type=int, default=100)
    p.add_argument("--corrupt", choices=vae.PARAM_NAMES, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("config", "out", "seed_data", "seed_split", "seed_model"):
        setattr(args, name, getattr(args, name, None))
    for name in ("raw", "verbose"):
        setattr(args, name, getattr(args, name, False))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config.load(args.config)
        cfg = config.apply_overrides(cfg, out=args.out, seed_data=args.seed_data,
                                     seed_split=args.seed_split, seed_model=args.seed_model)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, RuntimeError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
