"""Command-line entry point: ``fissioncv <subcommand> [options]``.

Settings come from an optional flat ``key = value`` config file (``#`` starts a
comment) and are overridden by flags. Exit codes: 0 success, 1 I/O, 2
validation, 3 numerical. Failures also print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from fissioncv import __version__
from fissioncv.errors import FissionError, InvalidParameterError
from fissioncv.experiments import (
    DESK_CANDIDATES,
    ITEM_HEADER,
    RANKING_HEADER,
    RATES_HEADER,
    OodPopulations,
    ScoreParams,
    alpha_sweep,
    few_shot_select,
    kernel_candidates,
    run_ood_test,
)
from fissioncv.fission import split
from fissioncv.gaussian_oracle import ToyModel, discrimination_curve, mc_convergence_study
from fissioncv.linops import (
    DEFAULT_SUPPORT,
    ValidMask,
    circulant,
    identity,
    make_kernel,
    make_mri_mask,
    parse_kernel_spec,
)
from fissioncv.models import BayesianModel, GaussianLikelihood, make_prior
from fissioncv.reporting import write_rows, write_rows_csv
from fissioncv.samplers import SamplerConfig, sample_posterior
from fissioncv.scoring import REPORT_HEADER, make_embedding, score
from fissioncv.tensors import SeedSpec, load_measurement, read_tensor, write_tensor


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none") else float(text)


# key -> (parser, default)
SCHEMA = {
    "sigma": (float, 0.1),
    "sigma_x": (float, 1.0),
    "alpha": (float, 0.5),
    "k_realizations": (int, 10),
    "n_samples": (int, 100),
    "l_samples": (int, 20),
    "metric": (str, "phi1"),
    "sampler": (str, "exact_conjugate"),
    "burn_in": (int, 200),
    "thinning": (int, 20),
    "step_scale": (float, 0.9),
    "prior": (str, "iid_gaussian"),
    "lambda": (float, 10.0),
    "epsilon": (float, 0.01),
    "kernel_family": (str, "none"),
    "kernel_params": (_floats, ()),
    "kernel_support": (int, DEFAULT_SUPPORT),
    "mask_r": (_opt_float, None),
    "mask_center_fraction": (float, 0.08),
    "embedding": (str, "identity"),
    "embedding_levels": (int, 3),
    "percentile": (float, 95.0),
    "master_seed": (int, 0),
    "threads": (int, 0),
}


class ConfigError(InvalidParameterError):
    pass


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def resolve_config(path=None, overrides=None) -> dict:
    """Defaults, then the config file, then flag overrides; every value parsed by the schema."""
    raw = {}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            raw[key] = value
    cfg = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except (TypeError, ValueError):
                raise ConfigError(f"--{key.replace('_', '-')}: cannot parse {raw[key]!r}") from None
        else:
            cfg[key] = default
    _validate(cfg)
    if cfg["threads"] <= 0:
        cfg["threads"] = os.cpu_count() or 1
    return cfg


def _flag(key):
    return "--" + key.replace("_", "-")


def _validate(cfg):
    def need(ok, key, what):
        if not ok:
            raise ConfigError(f"{_flag(key)} {what}, got {cfg[key]!r}")

    need(cfg["sigma"] > 0, "sigma", "must be > 0")
    need(cfg["sigma_x"] > 0, "sigma_x", "must be > 0")
    need(0 < cfg["alpha"] < 1, "alpha", "must lie in (0, 1)")
    for key in ("k_realizations", "n_samples", "l_samples", "thinning", "embedding_levels"):
        need(cfg[key] >= 1, key, "must be >= 1")
    need(cfg["burn_in"] >= 0, "burn_in", "must be >= 0")
    need(0 < cfg["step_scale"] <= 1, "step_scale", "must lie in (0, 1]")
    need(cfg["metric"] in ("phi1", "phi2", "phi3"), "metric", "must be phi1, phi2 or phi3")
    need(cfg["sampler"] in ("exact_conjugate", "ula"), "sampler", "must be exact_conjugate or ula")
    need(cfg["prior"] in ("iid_gaussian", "charbonnier_tv"), "prior", "must be iid_gaussian or charbonnier_tv")
    need(cfg["lambda"] > 0, "lambda", "must be > 0")
    need(cfg["epsilon"] > 0, "epsilon", "must be > 0")
    need(cfg["embedding"] in ("identity", "pyramid", "external"), "embedding", "must be identity, pyramid or external")
    need(0 < cfg["percentile"] < 100, "percentile", "must lie in (0, 100)")
    need(0 <= cfg["master_seed"] < 2**64, "master_seed", "must be a 64-bit unsigned integer")
    need(cfg["kernel_support"] >= 1 and cfg["kernel_support"] % 2 == 1, "kernel_support", "must be odd and >= 1")
    need(cfg["mask_r"] is None or cfg["mask_r"] >= 1, "mask_r", "must be >= 1")
    need(0 < cfg["mask_center_fraction"] <= 1, "mask_center_fraction", "must lie in (0, 1]")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_prior(cfg):
    return make_prior(cfg["prior"], sigma_x=cfg["sigma_x"], lam=cfg["lambda"], eps=cfg["epsilon"])


def build_operator(cfg, shape):
    if cfg["kernel_family"] not in ("none", ""):
        kernel = make_kernel(cfg["kernel_family"], cfg["kernel_params"], cfg["kernel_support"])
        return circulant(kernel, shape), kernel.half_support
    if cfg["mask_r"] is not None:
        seed = SeedSpec(cfg["master_seed"], (2**31,))
        return make_mri_mask(shape, cfg["mask_r"], cfg["mask_center_fraction"], seed), 0
    return identity(shape), 0


def build_model(cfg, shape, label="model"):
    op, border = build_operator(cfg, shape)
    valid = ValidMask(border, shape) if border > 0 else None
    return BayesianModel(build_prior(cfg), GaussianLikelihood(op, cfg["sigma"], valid), label)


def build_sampler(cfg):
    return SamplerConfig(cfg["sampler"], cfg["burn_in"], cfg["thinning"], cfg["step_scale"])


def build_params(cfg, embedding_path=None, threads=None):
    embedding = None
    if cfg["metric"] == "phi2":
        embedding = make_embedding(cfg["embedding"], cfg["embedding_levels"], embedding_path)
    return ScoreParams(cfg["alpha"], cfg["k_realizations"], cfg["n_samples"], cfg["l_samples"], build_sampler(cfg),
                       embedding, cfg["master_seed"], threads or cfg["threads"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _emit_rows(out, header, rows, master_seed):
    if out is None:
        write_rows(sys.stdout, header, rows, master_seed)
    else:
        write_rows_csv(out, header, rows, master_seed)


def cmd_split(args, cfg):
    y = load_measurement(args.input)
    pair = split(y, cfg["sigma"], cfg["alpha"], SeedSpec(cfg["master_seed"]))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "y_plus.ft64", pair.y_plus)
    write_tensor(out / "y_minus.ft64", pair.y_minus)
    write_tensor(out / "w.ft64", pair.w)


def cmd_oracle_check(args, cfg):
    toy = ToyModel(args.m[0], cfg["sigma"], cfg["sigma_x"])
    alphas = args.alphas or [cfg["alpha"]]
    rows = mc_convergence_study(toy, alphas, args.m, args.n_max, args.k, SeedSpec(cfg["master_seed"]))
    _emit_rows(args.out, ["alpha", "m", "N", "K", "rel_log_error"], rows, cfg["master_seed"])


def cmd_discriminate(args, cfg):
    toy = ToyModel(args.m, cfg["sigma"], cfg["sigma_x"])
    if not args.grid_step > 0 or args.grid_max < args.grid_min:
        raise ConfigError("--grid-step must be > 0 and --grid-max >= --grid-min")
    n_steps = int(round((args.grid_max - args.grid_min) / args.grid_step))
    grid = [round(args.grid_min + i * args.grid_step, 10) for i in range(n_steps + 1)]
    rows = []
    for alpha in args.alphas or [cfg["alpha"]]:
        curve = discrimination_curve(toy, grid, alpha, args.k, SeedSpec(cfg["master_seed"]))
        rows += [(sx, float(alpha), mean, err) for sx, mean, err in curve]
    _emit_rows(args.out, ["sigma_x_prime", "alpha", "mean_log_ratio", "stderr"], rows, cfg["master_seed"])


def _read_partials(path):
    known = {}
    if path is not None and Path(path).exists():
        for line in Path(path).read_text().splitlines():
            if line and not line.startswith(("#", "k,")):
                k, value = line.split(",")
                known[int(k)] = float(value)
    return known


def cmd_score(args, cfg):
    y = load_measurement(args.measurement)
    model = build_model(cfg, y.shape, args.label)
    params = build_params(cfg, args.embedding_file)
    known = _read_partials(args.partials) if args.resume else {}
    fh = None
    if args.partials is not None:
        path = Path(args.partials)
        fresh = not (args.resume and path.exists() and path.stat().st_size > 0)
        fh = open(path, "w" if fresh else "a")
        if fresh:
            fh.write("k,partial\n")
            fh.flush()

    def flush(k, value):
        if fh is not None:
            fh.write(f"{k},{value!r}\n")
            fh.flush()

    try:
        report = score(cfg["metric"], model, y, cfg["alpha"], K=params.K, N=params.N, L=params.L,
                       embedding=params.embedding, sampler_config=params.sampler, seed=cfg["master_seed"],
                       threads=params.threads, known=known, on_partial=flush)
    finally:
        if fh is not None:
            fh.close()
    _emit_rows(args.out, REPORT_HEADER, [report.csv_row()], cfg["master_seed"])


def cmd_sample(args, cfg):
    y = load_measurement(args.measurement)
    model = build_model(cfg, y.shape)
    config = build_sampler(cfg)
    config = SamplerConfig(config.kind, config.burn_in, config.thinning, config.step_scale, SeedSpec(cfg["master_seed"]))
    write_tensor(args.out, sample_posterior(model, y, cfg["n_samples"], config).samples)


def cmd_select_kernel(args, cfg):
    measurements = [load_measurement(p) for p in args.measurement]
    shape = measurements[0].shape
    kernels = [parse_kernel_spec(s, cfg["kernel_support"]) for s in (args.kernel or DESK_CANDIDATES)]
    candidates = kernel_candidates(kernels, shape, cfg["sigma"], build_prior(cfg))
    params = build_params(cfg, args.embedding_file)
    ranking = few_shot_select(candidates, measurements, cfg["metric"], params)
    rows = [(r.label, r.score, r.rank) for r in ranking]
    _emit_rows(args.out, RANKING_HEADER, rows, cfg["master_seed"])


def _stack(path):
    return [np.asarray(t) for t in read_tensor(path)] if path else []


def cmd_ood_test(args, cfg):
    reference = _stack(args.reference)
    ids = _stack(args.id)
    oods = _stack(args.ood)
    if not reference:
        raise ConfigError("--reference stack is required")
    model = build_model(cfg, reference[0].shape)
    populations = OodPopulations(model, tuple(reference), tuple([(y, False) for y in ids] + [(y, True) for y in oods]))
    params = build_params(cfg, args.embedding_file)
    spec, rates, items = run_ood_test(populations, cfg["metric"], params, cfg["percentile"])
    if args.out_items:
        write_rows_csv(args.out_items, ITEM_HEADER, [(i, lab, cfg["metric"], v) for i, lab, v in items],
                       cfg["master_seed"])
    if args.alphas:
        rows = alpha_sweep(cfg["metric"], args.alphas, populations, params, cfg["percentile"])
    else:
        rows = [(cfg["alpha"], rates.type1, rates.power, rates.n_id, rates.n_ood)]
    _emit_rows(args.out, RATES_HEADER, rows, cfg["master_seed"])


def cmd_kernel(args, cfg):
    kernel = make_kernel(cfg["kernel_family"], cfg["kernel_params"], cfg["kernel_support"])
    write_tensor(args.out, kernel.values)


def cmd_mri_mask(args, cfg):
    if cfg["mask_r"] is None:
        raise ConfigError("--mask-r is required")
    op = make_mri_mask((args.height, args.width), cfg["mask_r"], cfg["mask_center_fraction"],
                       SeedSpec(cfg["master_seed"], (2**31,)))
    write_tensor(args.out, op.mask)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _config_flags(p, keys):
    for key in keys:
        p.add_argument(_flag(key), dest=key, default=None, help=f"override config key {key}")


MODEL_KEYS = ("sigma", "sigma_x", "prior", "lambda", "epsilon", "kernel_family", "kernel_params", "kernel_support",
              "mask_r", "mask_center_fraction")
SCORE_KEYS = ("alpha", "k_realizations", "n_samples", "l_samples", "metric", "sampler", "burn_in", "thinning",
              "step_scale", "embedding", "embedding_levels", "percentile")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report_error(2, "UsageError", message)
        self.print_usage(sys.stderr)
        sys.exit(2)


def build_parser():
    parser = _Parser(prog="fissioncv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, keys, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", dest="master_seed", default=None, help="master seed")
        p.add_argument("--threads", dest="threads", default=None, help="worker threads (0 = all cores)")
        _config_flags(p, keys)
        p.set_defaults(func=fn)
        return p

    p = add("split", cmd_split, ("sigma", "alpha"), "split one measurement into y_plus / y_minus")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("oracle-check", cmd_oracle_check, ("sigma", "sigma_x"), "Monte Carlo vs closed-form convergence table")
    p.add_argument("--m", type=int, nargs="+", default=[10])
    p.add_argument("--alpha", dest="alphas", type=float, nargs="+", default=None)
    p.add_argument("--n-max", type=int, default=50000)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--out")

    p = add("discriminate", cmd_discriminate, ("sigma", "sigma_x"), "closed-form log-ratio curves over sigma_x'")
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--alpha", dest="alphas", type=float, nargs="+", default=None)
    p.add_argument("--k", type=int, default=250)
    p.add_argument("--grid-min", type=float, default=0.5)
    p.add_argument("--grid-max", type=float, default=2.0)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out")

    p = add("score", cmd_score, MODEL_KEYS + SCORE_KEYS, "score one measurement under one model")
    p.add_argument("--measurement", required=True)
    p.add_argument("--label", default="model")
    p.add_argument("--embedding-file")
    p.add_argument("--partials", help="per-realization partial sums, flushed as each k finishes")
    p.add_argument("--resume", action="store_true", help="reuse k values already in --partials")
    p.add_argument("--out")

    p = add("sample", cmd_sample, MODEL_KEYS + ("n_samples", "sampler", "burn_in", "thinning", "step_scale"),
            "draw posterior samples as an FT64 stack")
    p.add_argument("--measurement", required=True)
    p.add_argument("--out", required=True)

    p = add("select-kernel", cmd_select_kernel, MODEL_KEYS + SCORE_KEYS, "rank blur kernels for measurement(s)")
    p.add_argument("--measurement", action="append", required=True, help="repeat for few-shot selection")
    p.add_argument("--kernel", action="append", help="family:p1[,p2]; repeat per candidate")
    p.add_argument("--embedding-file")
    p.add_argument("--out")

    p = add("ood-test", cmd_ood_test, MODEL_KEYS + SCORE_KEYS, "percentile-threshold OOD test")
    p.add_argument("--reference", required=True, help="FT64 stack of reference measurements")
    p.add_argument("--id", help="FT64 stack of in-distribution test measurements")
    p.add_argument("--ood", help="FT64 stack of out-of-distribution test measurements")
    p.add_argument("--alphas", type=float, nargs="+", help="sweep these alpha values")
    p.add_argument("--embedding-file")
    p.add_argument("--out-items")
    p.add_argument("--out")

    p = add("kernel", cmd_kernel, ("kernel_family", "kernel_params", "kernel_support"), "export a kernel as FT64")
    p.add_argument("--out", required=True)

    p = add("mri-mask", cmd_mri_mask, ("mask_r", "mask_center_fraction"), "export a 0/1 Fourier mask as FT64")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--out", required=True)
    return parser


def _report_error(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(message)}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {key: getattr(args, key, None) for key in SCHEMA}
    try:
        cfg = resolve_config(args.config, overrides)
        args.func(args, cfg)
    except FissionError as exc:
        _report_error(exc.exit_code, type(exc).__name__, exc)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        _report_error(1, type(exc).__name__, exc)
        return 1
    except (ValueError, TypeError) as exc:
        _report_error(2, type(exc).__name__, exc)
        return 2
    except (ArithmeticError, FloatingPointError) as exc:
        _report_error(3, type(exc).__name__, exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
