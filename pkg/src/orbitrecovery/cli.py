"""Command-line entry point: trdeg, fisher, landscape and quadcheck experiments.

Exit codes: 0 success, 1 mismatch or threshold breach, 2 hypothesis refusal,
3 no clear rank gap, 4 search exhausted, 64 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

EXIT_OK, EXIT_MISMATCH, EXIT_REFUSED, EXIT_NOGAP, EXIT_EXHAUSTED, EXIT_USAGE = 0, 1, 2, 3, 4, 64
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class ExperimentConfig:
    command: str
    sub: str | None = None
    model: str | None = None
    L: int | None = None
    S: list | None = None
    m: int | None = None
    alpha: list | None = None
    n: int | None = None
    quad: list | None = None
    seed: int = 0
    threads: int | None = None
    tol: float = 1e-9
    trials: int | None = None
    k: int | None = None
    out: str = "."
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def _ints(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p):
    p.add_argument("--model", help="mra, mra_projected, sphere, cryo, cryo_projected, procrustes")
    p.add_argument("--L", type=int)
    p.add_argument("--S", type=_ints, help="radial bandlimits, comma list or one value")
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=_floats)
    p.add_argument("--n", type=int)
    p.add_argument("--quad", type=_ints, help="n for SO(2) or a,b,c for SO(3)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    p.add_argument("--json-config", dest="json_config", help="read settings from a config file")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="orbitrecovery", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("trdeg", help="numerical trdeg ladder vs predicted tier sizes"))
    _common(sub.add_parser("fisher", help="observed Fisher spectra and tier slopes"))
    land = sub.add_parser("landscape", help="landscape experiments")
    land.add_argument("sub", choices=["procrustes", "mra-spurious", "variety"])
    _common(land)
    _common(sub.add_parser("quadcheck", help="quadrature identity residuals"))
    return p


def config_from_args(ns) -> ExperimentConfig:
    base = {}
    if getattr(ns, "json_config", None):
        with open(ns.json_config) as fh:
            base = json.load(fh)
    cfg = ExperimentConfig(command=ns.command)
    for key, val in base.items():
        if hasattr(cfg, key) and key != "command":
            setattr(cfg, key, val)
    for key in ("sub", "model", "L", "S", "m", "alpha", "n", "quad", "seed", "threads", "tol",
                "trials", "k", "out"):
        val = getattr(ns, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg


# ------------------------------------------------------------------- helpers

def _fmt(x) -> str:
    return f"{x:.17g}"


def _model(cfg):
    from .models import make_model
    if cfg.model is None:
        raise UsageError("--model is required")
    S = cfg.S
    if S is not None and len(S) == 1:
        S = S[0]
    try:
        return make_model(cfg.model, L=cfg.L, S=S, m=cfg.m)
    except ValueError as exc:
        raise UsageError(str(exc))


def _rule(cfg, model):
    from .group import so2_rule, so3_rule
    q = cfg.quad
    if model.group == "SO2":
        return so2_rule(q[0] if q else 4 * model.L + 4)
    if q is None:
        n = max(3 * (1 if model.kind == "procrustes" else model.L) + 2, 8)
        q = [n, n, n]
    if len(q) != 3:
        raise UsageError("--quad needs a,b,c for SO(3) groups")
    return so3_rule(*q)


def _write(cfg, name, text) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


# ------------------------------------------------------------------ commands

def cmd_trdeg(cfg) -> int:
    import numpy as np
    from .algebra import NoRankGap, trdeg_ladder
    from .models import HypothesisError, predicted_dims

    model = _model(cfg)
    try:
        predicted_dims(model)
    except HypothesisError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    try:
        rep = trdeg_ladder(model, tol=cfg.tol, rng=np.random.default_rng(cfg.seed))
    except NoRankGap as exc:
        print(f"no rank gap: {exc}", file=sys.stderr)
        return EXIT_NOGAP
    _write(cfg, "trdeg.json", rep.to_json())
    _write(cfg, "config.json", cfg.to_json())
    print(f"ranks {list(rep.ranks)} predicted {list(rep.predicted)} redraws {rep.redraws}")
    return EXIT_OK if rep.matches else EXIT_MISMATCH


def cmd_fisher(cfg) -> int:
    import numpy as np
    from .likelihood import tier_scaling
    from .models import HypothesisError

    if not cfg.alpha:
        raise UsageError("--alpha needs at least one value")
    model = _model(cfg)
    rule = _rule(cfg, model)
    theta = np.random.default_rng(cfg.seed).standard_normal(model.d)
    try:
        rep = tier_scaling(model, theta, cfg.alpha, cfg.n or 10_000, rule, seed=cfg.seed)
    except HypothesisError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except ValueError as exc:
        raise UsageError(str(exc))
    os.makedirs(cfg.out, exist_ok=True)
    rep.write_csv(os.path.join(cfg.out, "fisher.csv"))
    summ = rep.summary()
    summ["runtime"] = None  # keep the JSON reproducible; timing goes to stdout
    _write(cfg, "fisher.json", json.dumps(summ, indent=1))
    _write(cfg, "config.json", cfg.to_json())
    print("slopes " + " ".join(_fmt(s) for s in rep.slopes) + f" runtime {rep.runtime:.1f}s")
    return EXIT_OK


def cmd_landscape(cfg) -> int:
    import numpy as np
    from .landscape import (SearchExhausted, VarietyChart, minimize_sk_on_variety,
                            mra_spurious_search, procrustes_descent_experiment)
    from .models import HypothesisError, make_model

    try:
        if cfg.sub == "procrustes":
            if cfg.m is None:
                raise UsageError("--m is required")
            summ = procrustes_descent_experiment(cfg.m, cfg.trials or 100, seed=cfg.seed)
            _write(cfg, "procrustes.json", summ.to_json())
            _write(cfg, "config.json", cfg.to_json())
            print(f"successes {summ.successes}/{summ.trials}")
            return EXIT_OK if summ.successes == summ.trials else EXIT_MISMATCH
        if cfg.sub == "mra-spurious":
            if cfg.L is None:
                raise UsageError("--L is required")
            rep = mra_spurious_search(cfg.L)
            _write(cfg, "mra_spurious.json", rep.to_json())
            _write(cfg, "config.json", cfg.to_json())
            print(f"{rep.classification} kappa {_fmt(rep.info['kappa'])} delta "
                  f"{_fmt(rep.info['delta'])} lambda_min {_fmt(rep.projected_eigs.min())} "
                  f"rank {rep.rank} s3 {_fmt(rep.value)}")
            return EXIT_OK if rep.classification == "spurious-min" else EXIT_MISMATCH
        # variety: random starts on the k-th chart of an mra model
        L = cfg.L or 5
        k = cfg.k or 3
        rng = np.random.default_rng(cfg.seed)
        model = make_model("mra", L)
        theta = rng.standard_normal(model.d)
        chart = VarietyChart(model, k, theta)
        reports = [minimize_sk_on_variety(chart, rng.standard_normal(chart.dim))
                   for _ in range(cfg.trials or 10)]
        doc = [json.loads(r.to_json()) for r in reports]
        _write(cfg, "variety.json", json.dumps(doc, indent=1))
        _write(cfg, "config.json", cfg.to_json())
        counts = {}
        for r in reports:
            counts[r.classification] = counts.get(r.classification, 0) + 1
        print(" ".join(f"{key} {val}" for key, val in sorted(counts.items())))
        return EXIT_OK
    except HypothesisError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except SearchExhausted as exc:
        print(f"search exhausted: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED


def cmd_quadcheck(cfg) -> int:
    from .group import quadrature_identities, so2_rule, so3_rule

    q = cfg.quad or [20, 20, 20]
    L = cfg.L if cfg.L is not None else 8
    if len(q) == 1:
        rule, lp, lt = so2_rule(q[0]), L, L
    elif len(q) == 3:
        rule, lp, lt = so3_rule(*q), min(L, 6), min(L, 4)
    else:
        raise UsageError("--quad needs n (SO(2)) or a,b,c (SO(3))")
    rows = quadrature_identities(rule, L, lp, lt)
    lines = ["identity,degree,residual,threshold,ok"]
    for r in rows:
        lines.append(f"{r.identity},{'-'.join(map(str, r.degree))},{_fmt(r.residual)},"
                     f"{_fmt(r.threshold)},{int(r.ok)}")
    _write(cfg, "quadcheck.csv", "\n".join(lines) + "\n")
    _write(cfg, "config.json", cfg.to_json())
    worst = {}
    for r in rows:
        worst[r.identity] = max(worst.get(r.identity, 0.0), r.residual)
    print(" ".join(f"{key} {_fmt(val)}" for key, val in worst.items()))
    return EXIT_OK if all(r.ok for r in rows) else EXIT_MISMATCH


COMMANDS = {"trdeg": cmd_trdeg, "fisher": cmd_fisher, "landscape": cmd_landscape,
            "quadcheck": cmd_quadcheck}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.threads:
        # only effective before numpy is first imported in this process
        for var in THREAD_VARS:
            os.environ[var] = str(cfg.threads)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"elapsed {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
