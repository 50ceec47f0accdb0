"""Command-line entry point: density fitting, SSL training, ablation sweeps,
and oracle verification.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 numeric
abort. Output directories receive the effective config echo plus metrics;
wall-clock timestamps go only to the run.log sidecar so metrics files stay
byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .data import make_dataset
from .errors import ConfigError, NumericError
from .estimator import fit_density
from .flow import (flow_forward, flow_inverse, init_flow, load_checkpoint,
                   randomize_conditioners, save_checkpoint)
from .latent import init_latent, marginal_loglik
from .oracle import (finite_diff_grad, grid_density_dump, mc_normalization,
                     numeric_jacobian_logdet)
from .perturb import density_gradient
from .runconfig import echo_config, load_config, load_sweep
from .semisup import (SweepSpec, ablate, dataset_for_run, train_ssl,
                      write_metrics_csv)

OUT_ROOT_ENV = "DENSITYDESCENT_OUT_ROOT"


def _resolve_out(out: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    return out


def _log(out_dir: str, message: str) -> None:
    with open(os.path.join(out_dir, "run.log"), "a") as fh:
        fh.write(f"[{time.strftime('%Y-%m-%dT%H:%M:%S')}] {message}\n")
    print(message)


def _derived_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# fit-density


def cmd_fit_density(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(args.out)
    echo_config(cfg, os.path.join(out, "config.json"))
    ds = make_dataset(cfg.dataset)
    dim = ds.x.shape[1]
    k = cfg.flow.components or ds.n_classes
    s_flow, s_latent, s_fit = _derived_seeds(cfg.seed, 3)
    model = init_flow(dim, cfg.flow.blocks, cfg.flow.hidden, cfg.flow.s_max, s_flow)
    latent = init_latent(k, dim, s_latent)
    _log(out, f"fit-density: kind={cfg.dataset.kind} n={ds.n} dim={dim} "
              f"components={k} steps={cfg.fit.steps}")
    result = fit_density(ds.x[ds.labeled_idx], ds.y[ds.labeled_idx],
                         ds.x[ds.unlabeled_idx], model, latent, cfg.flow_train,
                         cfg.fit.steps, cfg.fit.batch,
                         np.random.default_rng(s_fit))
    with open(os.path.join(out, "loss.csv"), "w") as fh:
        fh.write("iteration,flow_loss,lr\n")
        for step, loss, lr in result.history:
            fh.write(f"{step},{loss!r},{lr!r}\n")
    save_checkpoint(os.path.join(out, "checkpoint.npz"), model, latent)
    if cfg.fit.grid:
        if dim != 2:
            raise ConfigError("grid dump needs a 2-D dataset")
        lo, hi = cfg.fit.grid_bounds
        # grid bounds should cover essentially all of the data mass
        q_lo, q_hi = np.quantile(ds.x, 0.005), np.quantile(ds.x, 0.995)
        if q_lo < lo or q_hi > hi:
            _log(out, f"warning: grid bounds [{lo}, {hi}] clip the data "
                      f"(0.5%..99.5% quantiles [{q_lo:.2f}, {q_hi:.2f}])")
        grid_density_dump(model, latent, ((lo, hi), (lo, hi)),
                          cfg.fit.grid_resolution,
                          path=os.path.join(out, "grid.csv"))
    held = ds.x[ds.test_idx]
    if len(held):
        nll = -float(np.mean(marginal_loglik(held, model, latent).data))
        _log(out, f"fit-density done: final_loss={result.losses[-1]:.6f} "
                  f"heldout_nll={nll:.6f}")
    else:
        _log(out, f"fit-density done: final_loss={result.losses[-1]:.6f}")
    return 0


# ---------------------------------------------------------------------------
# train-ssl


def cmd_train_ssl(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(args.out)
    echo_config(cfg, os.path.join(out, "config.json"))
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [cfg.seed])
    ssl_cfg = cfg.ssl_config()
    accs = {}
    for s in seeds:
        ds = dataset_for_run(cfg.dataset, s)
        result = train_ssl(replace(ssl_cfg, seed=s), ds)
        write_metrics_csv(result, os.path.join(out, f"metrics_seed{s}.csv"))
        accs[s] = result.final_test_acc
        _log(out, f"train-ssl seed={s}: test_acc={result.final_test_acc:.4f} "
                  f"flow_steps={result.flow_steps} "
                  f"fallbacks={result.perturb_fallbacks}")
    summary = {
        "config": cfg.effective,
        "seeds": seeds,
        "accuracies": {str(s): accs[s] for s in seeds},
        "mean_accuracy": float(np.mean(list(accs.values()))),
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(out, f"train-ssl done: mean_accuracy={summary['mean_accuracy']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    sweep = load_sweep(args.sweep)
    out = _resolve_out(args.out)
    echo_config(cfg, os.path.join(out, "config.json"))
    spec = SweepSpec(kinds=sweep.kinds, eps=sweep.eps,
                     lambda_ft=sweep.lambda_ft, seeds=sweep.seeds)
    _log(out, f"ablate: kinds={spec.kinds} eps={spec.eps} "
              f"lambda_ft={spec.lambda_ft} seeds={spec.seeds}")
    rows = ablate(cfg.ssl_config(), cfg.dataset, spec)
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write("kind,eps,lambda_ft,seed,test_acc\n")
        for r in rows:
            fh.write(f"{r['kind']},{r['eps']!r},{r['lambda_ft']!r},"
                     f"{r['seed']},{r['test_acc']!r}\n")
    _log(out, f"ablate done: {len(rows)} rows")
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    report: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(cfg.seed)

    def _check(name: str, ok: bool, detail: str) -> None:
        report.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    if cfg.verify.checkpoint:
        pairs = [load_checkpoint(cfg.verify.checkpoint)]
    else:
        pairs = []
        for d in cfg.verify.dims:
            model = init_flow(d, cfg.flow.blocks, cfg.flow.hidden,
                              cfg.flow.s_max, cfg.seed)
            latent = init_latent(cfg.flow.components or 2, d, cfg.seed + 1)
            pairs.append((model, latent))
            rand = init_flow(d, cfg.flow.blocks, cfg.flow.hidden,
                             cfg.flow.s_max, cfg.seed)
            randomize_conditioners(rand, scale=0.5, seed=cfg.seed + 2)
            pairs.append((rand, latent))

    for model, latent in pairs:
        d = model.d
        v = rng.standard_normal((1000, d))
        z, _ = flow_forward(v, model)
        err = float(np.abs(flow_inverse(z.data, model) - v).max())
        _check(f"invertibility(d={d})", err < 1e-9, f"max roundtrip err {err:.3e}")

        if d <= 8:
            worst = 0.0
            for _ in range(10):
                point = rng.standard_normal(d)
                _, logdet = flow_forward(point, model)
                numeric = numeric_jacobian_logdet(model, point)
                # identity flows have logdet 0; floor the denominator
                worst = max(worst, abs(float(logdet.data) - numeric)
                            / max(1e-6, abs(numeric)))
            _check(f"logdet(d={d})", worst < 1e-4, f"max rel err {worst:.3e}")

        worst = 0.0
        for _ in range(20):
            point = rng.standard_normal(d)
            g = density_gradient(point, model, latent)
            fd = finite_diff_grad(
                lambda w: -float(marginal_loglik(w, model, latent).data), point)
            worst = max(worst, float(np.abs(g - fd).max() / max(1.0, np.abs(fd).max())))
        _check(f"gradient(d={d})", worst < 1e-3, f"max rel err {worst:.3e}")

        if d == 2:
            mass, se, warn = mc_normalization(model, latent, ((-8, 8), (-8, 8)),
                                              cfg.verify.mc_samples, seed=cfg.seed)
            # tolerance adapts to the Monte-Carlo noise of the sample budget
            ok = abs(mass - 1.0) <= max(0.03, 4.0 * se) and not warn
            _check("normalization(d=2)", ok, f"mass {mass:.4f} (se {se:.4f})")

    failed = [name for name, ok, _ in report if not ok]
    print(f"verify: {len(report) - len(failed)}/{len(report)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densitydescent",
        description="Flow density estimation and density-descending feature "
                    "perturbations on synthetic benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-density", help="fit the flow estimator to a dataset")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_fit_density)

    p = sub.add_parser("train-ssl", help="run teacher-student training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default=None,
                   help="comma-separated run seeds (default: config seed)")
    p.set_defaults(fn=cmd_train_ssl)

    p = sub.add_parser("ablate", help="train every cell of a sweep grid")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True, help="JSON sweep spec")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("verify", help="run the numeric oracle suite")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
