"""Command-line entry point: ``pedcross {train,eval,synth,fit,validate}``.

Each command writes into one run directory containing a ``manifest.json``
with the resolved configuration, so ``--config <run>/manifest.json``
reproduces the run.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 runtime error, 5 validation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import artifacts as art
from .env import EnvConfig
from .evaluation import (cit_cdf, gap_acceptance_rate, rollout, tta_dispersion)
from .fitting import (DataError, VariantRow, aic, build_bank, compare_variants, fit_sigma, read_human_csv,
                      synthesize, write_human_csv)
from .qnet import QNetwork, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainMode, sigma_grid, train, write_training_log
from .world import RoadGeometry, WorldConfig

log = logging.getLogger("pedcross")

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME, EXIT_INVALID = 2, 3, 4, 5


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------

def env_config_from_dict(d: dict, geometry: RoadGeometry) -> EnvConfig:
    unknown = set(d) - (set(EnvConfig.__dataclass_fields__) - {"geometry"})
    if unknown:
        raise ConfigError(f"unknown env config keys: {sorted(unknown)}")
    return EnvConfig(geometry=geometry, **d)


def env_config_to_dict(cfg: EnvConfig) -> dict:
    d = asdict(cfg)
    d.pop("geometry")
    return d


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, s = (float(x) for x in text.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            return sigma_grid(a, b, s)
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected start:stop:step or a,b,c") from None


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = value


def load_config(path: str | None, overrides: list[str]) -> tuple[dict, int | None]:
    """Read a JSON config (or a previous manifest) and apply ``key=value`` overrides."""
    cfg: dict = {}
    seed = None
    if path:
        try:
            with open(path) as f:
                cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if "schema_version" in cfg and "config" in cfg:  # a manifest
            seed = cfg.get("seed")
            cfg = cfg["config"]
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        k, v = ov.split("=", 1)
        try:
            v = json.loads(v)
        except json.JSONDecodeError:
            pass
        _set_path(cfg, k.strip(), v)
    return cfg, seed


def resolve_common(cfg: dict) -> tuple[WorldConfig, EnvConfig]:
    try:
        world = WorldConfig.from_dict(cfg.get("world", {}))
        env = env_config_from_dict(cfg.get("env", {}), world.geometry)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return world, env


def _sigma_tag(s: float) -> str:
    return f"{s:.3f}"


# --- train -------------------------------------------------------------------------

def _train_job(args):
    tcfg_dict, world_dict, env_dict, seed = args
    world = WorldConfig.from_dict(world_dict)
    env = env_config_from_dict(env_dict, world.geometry)
    return train(TrainConfig.from_dict(tcfg_dict), world.scenarios, seed, env)


def cmd_train(a) -> int:
    cfg, manifest_seed = load_config(a.config, a.set or [])
    tsec = dict(cfg.get("train", {}))
    if a.mode:
        tsec["mode"] = a.mode
    if a.max_episodes is not None:
        tsec["max_episodes"] = a.max_episodes
    mode = TrainMode(tsec.get("mode", "ideal"))
    tsec["mode"] = mode.value
    if a.grid:
        grid = parse_grid(a.grid)
        if mode is TrainMode.CONDITIONED:
            tsec["sigma_grid"] = grid
        else:
            cfg["sigmas"] = grid
    if a.sigma:
        cfg["sigmas"] = [float(s) for s in a.sigma]
    seed = a.seed if a.seed is not None else (manifest_seed if manifest_seed is not None else cfg.get("seed", 0))
    workers = a.workers or cfg.get("workers", 1)
    world, env = resolve_common(cfg)

    if mode is TrainMode.PER_SIGMA:
        sigmas = cfg.get("sigmas") or sigma_grid(0, 1, 0.05)
    else:
        sigmas = [None]
    jobs, tags = [], []
    for i, s in enumerate(sigmas):
        d = dict(tsec)
        if s is not None:
            d["sigma_v"] = float(s)
        try:
            tc = TrainConfig.from_dict(d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        tag = mode.value if s is None else f"{mode.value}_{_sigma_tag(s)}"
        tags.append(tag)
        # each grid point gets its own seed so that runs do not depend on worker order
        jobs.append((tc.to_dict(), world.to_dict(), env_config_to_dict(env), int(seed) * 1000 + i))

    out = Path(a.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]

    outputs = []
    for tag, job, res in zip(tags, jobs, results):
        ck = f"checkpoints/{tag}.qnet.zip"
        save_checkpoint(res.net, out / ck, job[0], extra={
            "converged": res.converged, "episodes": len(res.log), "learn_steps": res.learn_steps,
            "seed": job[3]})
        lg = f"{art.TRAIN_LOG_PREFIX}_{tag}.csv"
        write_training_log(res.log, out / lg)
        outputs += [ck, lg]
        log.info("%s: %s after %d episodes", tag, "converged" if res.converged else "NOT converged", len(res.log))
    full = {"world": world.to_dict(), "env": env_config_to_dict(env), "train": tsec,
            "sigmas": [s for s in sigmas if s is not None], "workers": workers}
    art.write_manifest(out, "train", int(seed), full, outputs)
    return 0


# --- model banks -----------------------------------------------------------------

def load_models(path: str | Path) -> list[tuple[QNetwork, dict]]:
    p = Path(path)
    files = sorted(p.rglob("*.qnet.zip")) if p.is_dir() else [p]
    if not files:
        raise DataError(f"no checkpoints under {path}")
    return [load_checkpoint(f) for f in files]


class NetSampler:
    """CIT sampler over checkpoints: per-sigma networks or one conditioned network."""

    def __init__(self, models: list[tuple[QNetwork, dict]], env: EnvConfig | None = None):
        self.env = env
        self.per_sigma: dict[float, QNetwork] = {}
        self.conditioned: QNetwork | None = None
        self.grid: list[float] = []
        for net, header in models:
            if net.mode == "conditioned":
                self.conditioned = net
                self.grid = [float(s) for s in header["train_config"].get("sigma_grid", [])]
            elif net.mode == "per-sigma":
                self.per_sigma[round(float(net.sigma_v), 10)] = net
        if self.conditioned is None:
            self.grid = sorted(self.per_sigma)
        if not self.grid:
            raise DataError("no noisy-observer checkpoints in bank")

    @property
    def kind(self) -> str:
        return "conditioned" if self.conditioned is not None else "per-sigma"

    def net_for(self, sigma_v: float) -> QNetwork:
        key = round(float(sigma_v), 10)
        if self.conditioned is not None:
            if not any(abs(key - g) < 1e-9 for g in self.grid):
                raise DataError(f"sigma_v={sigma_v} outside the conditioned model's grid")
            return self.conditioned
        if key not in self.per_sigma:
            raise DataError(f"sigma_v={sigma_v} not in bank {sorted(self.per_sigma)}")
        return self.per_sigma[key]

    def __call__(self, sigma_v: float, scenario, n: int, seed: int) -> np.ndarray:
        recs = rollout(self.net_for(sigma_v), scenario, sigma_v, n, seed, self.env)
        return np.array([r.cit for r in recs])


# --- eval --------------------------------------------------------------------------

def cmd_eval(a) -> int:
    cfg, manifest_seed = load_config(a.config, a.set or [])
    world, env = resolve_common(cfg)
    seed = a.seed if a.seed is not None else (manifest_seed if manifest_seed is not None else cfg.get("seed", 0))
    n = a.n or cfg.get("n", 1000)
    tta_n = a.tta_n or cfg.get("tta_n", 10_000)
    ids = [int(x) for x in a.scenarios.split(",")] if a.scenarios else \
        cfg.get("scenarios_ids") or [s.id for s in world.scenarios if not s.training_only]
    scenarios = [world.by_id(i) for i in ids]
    checkpoints = a.checkpoint or cfg.get("checkpoints", [])
    if not checkpoints:
        raise ConfigError("no checkpoints given")
    sigmas_req = [float(s) for s in a.sigma] if a.sigma else cfg.get("sigmas")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    trials, acc, cdf = [], [], []
    plot = {"schema_version": art.SCHEMA_VERSION, "gap_acceptance": [], "cit_cdf": [], "tta_dispersion": []}
    noisy_sigmas: set[float] = set()
    for path in checkpoints:
        for net, header in load_models(path):
            if net.mode == "conditioned":
                if not sigmas_req:
                    raise ConfigError(f"{path}: conditioned checkpoint needs --sigma")
                sig_list = sigmas_req
            elif net.mode == "per-sigma":
                if sigmas_req and not any(abs(s - net.sigma_v) < 1e-9 for s in sigmas_req):
                    raise ConfigError(f"{path}: checkpoint trained at sigma_v={net.sigma_v}, "
                                      f"requested {sigmas_req}")
                sig_list = [net.sigma_v]
            else:
                if sigmas_req and any(s != 0 for s in sigmas_req):
                    raise ConfigError(f"{path}: ideal-observer checkpoint cannot use sigma_v > 0")
                sig_list = [0.0]
            for sig in sig_list:
                if net.mode != "ideal":
                    noisy_sigmas.add(float(sig))
                recs = []
                for k, s in enumerate(scenarios):
                    r = rollout(net, s, sig, n, [seed, k], env)
                    recs.extend(r)
                    c = cit_cdf(r)
                    cdf.extend(art.cdf_rows(net.mode, sig, s.id, c))
                    plot["cit_cdf"].append({"model": net.mode, "sigma_v": sig, "scenario_id": s.id,
                                            "t": [p[0] for p in c.points], "p": [p[1] for p in c.points],
                                            "n_truncated": c.n_truncated})
                cells = list(gap_acceptance_rate(recs).values())
                acc.extend(art.acceptance_rows(net.mode, sig, cells))
                plot["gap_acceptance"].extend(
                    {"model": net.mode, "sigma_v": sig, **{k: v for k, v in asdict(c).items()}} for c in cells)
                trials.extend(art.trial_rows(net.mode, recs))

    tta = []
    for sig in sorted(noisy_sigmas):
        for k, s in enumerate(scenarios):
            st = tta_dispersion(sig, s, tta_n, [seed, 7, k], env)
            tta.append(art.tta_row(sig, s.id, s.v0, s.tau0, st))
            plot["tta_dispersion"].append({"sigma_v": sig, "scenario_id": s.id, "v0": s.v0, "tau0": s.tau0,
                                           "mean": st.mean, "sd": st.sd, "median": st.median,
                                           "p5": st.p5, "p95": st.p95, "n_undefined": st.n_undefined})

    art.write_rows(out / "trials.csv", art.CSV_SCHEMAS["trials.csv"], trials)
    art.write_rows(out / "acceptance.csv", art.CSV_SCHEMAS["acceptance.csv"], acc)
    art.write_rows(out / "cit_cdf.csv", art.CSV_SCHEMAS["cit_cdf.csv"], cdf)
    art.write_rows(out / "tta_dispersion.csv", art.CSV_SCHEMAS["tta_dispersion.csv"], tta)
    art.dump_json(plot, out / "plot_data.json")
    full = {"world": world.to_dict(), "env": env_config_to_dict(env), "checkpoints": [str(c) for c in checkpoints],
            "sigmas": sigmas_req, "scenarios_ids": ids, "n": n, "tta_n": tta_n}
    art.write_manifest(out, "eval", int(seed), full,
                       ["trials.csv", "acceptance.csv", "cit_cdf.csv", "tta_dispersion.csv", "plot_data.json"])
    return 0


# --- synth / fit ---------------------------------------------------------------------

def cmd_synth(a) -> int:
    cfg, manifest_seed = load_config(a.config, a.set or [])
    world, env = resolve_common(cfg)
    seed = a.seed if a.seed is not None else (manifest_seed if manifest_seed is not None else cfg.get("seed", 0))
    sampler = NetSampler(load_models(a.bank), env)
    sigmas = [float(s) for s in a.sigma]
    for s in sigmas:
        sampler.net_for(s)
    scenarios = [s for s in world.scenarios if not s.training_only]
    trials = synthesize(sampler, sigmas, scenarios, a.repeats, seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_human_csv(trials, scenarios, out / "dataset.csv")
    art.write_manifest(out, "synth", int(seed), {"world": world.to_dict(), "env": env_config_to_dict(env),
                                                 "bank": str(a.bank), "sigmas": sigmas, "repeats": a.repeats},
                       ["dataset.csv"])
    return 0


def cmd_fit(a) -> int:
    cfg, manifest_seed = load_config(a.config, a.set or [])
    world, env = resolve_common(cfg)
    seed = a.seed if a.seed is not None else (manifest_seed if manifest_seed is not None else cfg.get("seed", 0))
    try:
        trials = read_human_csv(a.data, world.scenarios, world.geometry)
    except OSError as e:
        raise DataError(f"cannot read {a.data}: {e.strerror}") from None
    if not trials:
        raise DataError(f"{a.data}: no trials")
    ids = sorted({t.scenario_id for t in trials})
    scenarios = [world.by_id(i) for i in ids]
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    def make_bank(path, tag):
        sampler = NetSampler(load_models(path), env)
        grid = parse_grid(a.grid) if a.grid else sampler.grid
        bank = build_bank(sampler, grid, scenarios, a.n, seed, kind=sampler.kind)
        bank.write_csv(out / "bank.csv" if tag == "per-sigma" else out / f"bank_{tag}.csv")
        return bank

    outputs = []
    bank = make_bank(a.bank, "per-sigma") if a.variant != "LSP" or not a.conditioned else None
    cond = make_bank(a.conditioned, "conditioned") if a.conditioned else None
    if bank is not None:
        outputs.append("bank.csv")
    if cond is not None:
        outputs.append("bank_conditioned.csv")
    if a.variant == "all":
        rows, fits = compare_variants(trials, bank, cond)
    else:
        groups: dict[str, list] = {}
        for t in trials:
            groups.setdefault(t.participant_id, []).append(t)
        if a.variant == "LMD":
            fits = [fit_sigma(trials, bank, variant="LMD")]
            k = 1
        else:
            src = cond if a.variant == "LSP" else bank
            if src is None:
                raise ConfigError("LSP needs --conditioned")
            fits = [fit_sigma(g, src, variant=a.variant) for _, g in sorted(groups.items())]
            k = len(groups)
        ll = sum(f.loglik for f in fits)
        rows = [VariantRow(a.variant, k, ll, aic(k, ll), True)]
    art.write_rows(out / "fits.csv", art.CSV_SCHEMAS["fits.csv"], art.fit_rows(fits))
    art.write_rows(out / "fit_logliks.csv", art.CSV_SCHEMAS["fit_logliks.csv"], art.fit_loglik_rows(fits))
    art.write_rows(out / "variants.csv", art.CSV_SCHEMAS["variants.csv"],
                   [(r.variant, r.k, r.loglik, r.aic, r.best) for r in rows])
    art.dump_json(art.variants_json(rows), out / "variants.json")
    outputs += ["fits.csv", "fit_logliks.csv", "variants.csv", "variants.json"]
    art.write_manifest(out, "fit", int(seed), {"world": world.to_dict(), "env": env_config_to_dict(env),
                                               "data": str(a.data), "bank": str(a.bank),
                                               "conditioned": str(a.conditioned) if a.conditioned else None,
                                               "variant": a.variant, "grid": a.grid, "n": a.n}, outputs)
    for r in rows:
        print(f"{r.variant}\tk={r.k}\tloglik={r.loglik:.3f}\tAIC={r.aic:.3f}{'  *' if r.best else ''}")
    return 0


def cmd_validate(a) -> int:
    total, errors = 0, []
    for p in a.paths:
        n, e = art.validate_tree(p)
        total += n
        errors += e
    for e in errors:
        print(e, file=sys.stderr)
    print(f"checked {total} file(s), {len(errors)} problem(s)")
    return EXIT_INVALID if errors else 0


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pedcross", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file or a previous run's manifest.json")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.batch_size=32 (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="run directory")

    sp = sub.add_parser("train", help="train ideal, per-sigma or conditioned models")
    common(sp)
    sp.add_argument("--mode", choices=[m.value for m in TrainMode])
    sp.add_argument("--grid", help="sigma grid start:stop:step (per-sigma models, or conditioned sampling grid)")
    sp.add_argument("--sigma", nargs="+", help="explicit sigma values for per-sigma training")
    sp.add_argument("--workers", type=int, help="parallel training processes")
    sp.add_argument("--max-episodes", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="greedy rollouts: acceptance, CIT CDFs, TTA dispersion")
    common(sp)
    sp.add_argument("--checkpoint", nargs="+", help="checkpoint files or directories")
    sp.add_argument("--sigma", nargs="+", help="sigma values (required for conditioned models)")
    sp.add_argument("--scenarios", help="comma-separated scenario ids (default: the six experimental ones)")
    sp.add_argument("--n", type=int, help="rollouts per cell (default 1000)")
    sp.add_argument("--tta-n", type=int, help="Monte-Carlo samples for TTA dispersion (default 10000)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="synthetic participants in the behavioural CSV format")
    common(sp)
    sp.add_argument("--bank", required=True, help="checkpoint directory")
    sp.add_argument("--sigma", nargs="+", required=True, help="one sigma_v per participant")
    sp.add_argument("--repeats", type=int, default=1, help="trials per scenario per participant")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("fit", help="fit sigma_v per participant and compare variants by AIC")
    common(sp)
    sp.add_argument("--data", required=True, help="CSV participant_id,v0_mps,d0_m,cit_s")
    sp.add_argument("--bank", required=True, help="per-sigma checkpoint directory")
    sp.add_argument("--conditioned", help="conditioned checkpoint (enables LSP)")
    sp.add_argument("--variant", choices=["LMD", "LMP", "LSP", "all"], default="all")
    sp.add_argument("--grid", help="restrict the sigma grid, start:stop:step")
    sp.add_argument("--n", type=int, default=1000, help="model rollouts per (sigma, scenario)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("validate", help="check artifacts against their schemas")
    sp.add_argument("paths", nargs="+")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, FloatingPointError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
