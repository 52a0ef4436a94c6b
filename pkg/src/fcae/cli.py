"""Command surface: search, deep-train, ablate-velocity, selfcheck, eval.

Runs are driven by a flat key = value config file with dotted keys;
command-line flags override file values, unknown keys are hard errors, and
every run writes its fully resolved config before anything else so that a
rerun from that file reproduces the run exactly.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as datamod
from . import reference
from .errors import ConfigError, DescriptorError
from .fitness import CaeEvaluator, SurrogateEvaluator
from .genome import (ArchGenome, GeneBounds, decode, deserialize, encode,
                     serialize)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import FcaeModel, forward_backward
from .nn.optim import AdamState, adam_step
from .pso import (GBEST_REFERENCE, X_REFERENCE, PsoConfig, SearchResult,
                  derive_rng, derive_seed, run_search)
from .trainer import (CLASSIFIER_FC_HEAD, DeepTrainConfig, deep_train,
                      evaluate_accuracy, format_metrics, train_classifier)

log = logging.getLogger(__name__)

# key -> (parser, default); parser is int/float/str or a validating callable
def _bool(raw: str) -> bool:
    if raw in ("true", "false"):
        return raw == "true"
    raise ValueError(f"expected true or false, got {raw!r}")


CONFIG_SPEC: dict[str, tuple] = {
    "run.seed": (int, 0),
    "run.jobs": (int, 1),
    "run.mode": (str, "cae"),  # cae | surrogate
    "data.dataset": (str, "synth:gaussian-blobs"),
    "data.root": (str, ""),
    "data.train_count": (int, 0),  # 0 = full set
    "data.test_count": (int, 0),
    "data.downsample": (int, 1),
    "data.synth_n": (int, 256),
    "data.synth_h": (int, 16),
    "data.synth_w": (int, 16),
    "data.synth_c": (int, 1),
    "data.synth_classes": (int, 0),
    "pso.inertia_w": (float, 0.72984),
    "pso.c1": (float, 1.496172),
    "pso.c2": (float, 1.496172),
    "pso.population_size": (int, 20),
    "pso.max_generations": (int, 30),
    "pso.v_max_fraction": (float, 0.5),
    "pso.reference_mode": (str, X_REFERENCE),
    "bounds.filter_min": (float, 2.0),
    "bounds.filter_max": (float, 5.0),
    "bounds.feature_maps_min": (float, 20.0),
    "bounds.feature_maps_max": (float, 100.0),
    "bounds.l2_min": (float, 0.0001),
    "bounds.l2_max": (float, 0.01),
    "bounds.pool_kernel_min": (float, 2.0),
    "bounds.pool_kernel_max": (float, 5.0),
    "bounds.max_conv_layers": (int, 5),
    "bounds.max_pool_layers": (int, 1),
    "bounds.square_mode": (_bool, True),
    "bounds.fix_conv_stride": (_bool, True),
    "fitness.train_epochs": (int, 5),
    "fitness.batch_size": (int, 32),
    "surrogate.target_arch": (str, ""),
    "trainer.epochs": (int, 100),
    "trainer.batch_size": (int, 32),
    "trainer.classifier": (str, "none"),
    "trainer.fc_units": (int, 512),
    "trainer.dropout_rate": (float, 0.5),
    "trainer.classifier_epochs": (int, 20),
    "trainer.classifier_runs": (int, 5),
    "ablation.n_seeds": (int, 20),
    "output.svg": (_bool, False),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def bounds(self) -> GeneBounds:
        v = self.values
        return GeneBounds(
            filter_size=(v["bounds.filter_min"], v["bounds.filter_max"]),
            conv_stride=(1.0, v["bounds.filter_max"]),
            feature_maps=(v["bounds.feature_maps_min"], v["bounds.feature_maps_max"]),
            l2=(v["bounds.l2_min"], v["bounds.l2_max"]),
            pool_kernel=(v["bounds.pool_kernel_min"], v["bounds.pool_kernel_max"]),
            pool_stride=(1.0, v["bounds.pool_kernel_max"]),
            max_conv_layers=v["bounds.max_conv_layers"],
            max_pool_layers=v["bounds.max_pool_layers"],
            square_mode=v["bounds.square_mode"],
            fix_conv_stride=v["bounds.fix_conv_stride"])

    def pso(self) -> PsoConfig:
        v = self.values
        return PsoConfig(
            inertia_w=v["pso.inertia_w"], c1=v["pso.c1"], c2=v["pso.c2"],
            population_size=v["pso.population_size"],
            max_generations=v["pso.max_generations"],
            v_max_fraction=v["pso.v_max_fraction"],
            reference_mode=v["pso.reference_mode"], seed=v["run.seed"])

    def deep_train_cfg(self) -> DeepTrainConfig:
        v = self.values
        return DeepTrainConfig(
            epochs=v["trainer.epochs"], batch_size=v["trainer.batch_size"],
            classifier=v["trainer.classifier"], fc_units=v["trainer.fc_units"],
            dropout_rate=v["trainer.dropout_rate"],
            classifier_epochs=v["trainer.classifier_epochs"],
            classifier_runs=v["trainer.classifier_runs"], seed=v["run.seed"])


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = (t.strip() for t in line.partition("="))
        if key not in CONFIG_SPEC:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        parser, _ = CONFIG_SPEC[key]
        try:
            out[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def format_config(values: dict) -> str:
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    values = {key: default for key, (_, default) in CONFIG_SPEC.items()}
    if config_path:
        values.update(parse_config_text(Path(config_path).read_text(), config_path))
    values.update(overrides)
    return RunConfig(values)


def _flag_overrides(args) -> dict:
    overrides = {}
    mapping = {"seed": "run.seed", "jobs": "run.jobs", "mode": "run.mode",
               "dataset": "data.dataset", "data_root": "data.root"}
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    return overrides


# ---------------------------------------------------------------------------
# dataset resolution


def _resolve_data(cfg: RunConfig, split: str) -> datamod.DatasetHandle:
    spec = cfg["data.dataset"]
    seed = cfg["run.seed"]
    if spec == "mnist":
        root = datamod.dataset_root(cfg["data.root"])
        if not (root / "train-images-idx3-ubyte").exists() \
                and not (root / "train-images-idx3-ubyte.gz").exists() \
                and (root / "mnist").is_dir():
            root = root / "mnist"
        handle = datamod.load_mnist(root, split)
    elif spec == "cifar10":
        root = datamod.dataset_root(cfg["data.root"])
        if not (root / "data_batch_1.bin").exists() and (root / "cifar10").is_dir():
            root = root / "cifar10"
        handle = datamod.load_cifar10_binary(root, split)
    elif spec.startswith("synth:"):
        kind = spec.split(":", 1)[1]
        n = cfg["data.synth_n"]
        handle = datamod.synth_dataset(
            kind, n, cfg["data.synth_h"], cfg["data.synth_w"], cfg["data.synth_c"],
            seed=derive_seed(seed, 7 if split == "test" else 6),
            n_classes=cfg["data.synth_classes"])
    else:
        raise ConfigError(f"unknown dataset {spec!r}")
    count = cfg["data.train_count"] if split == "train" else cfg["data.test_count"]
    if count:
        handle = datamod.subset(handle, count, derive_seed(seed, 8))
    if cfg["data.downsample"] > 1:
        handle = datamod.downsample(handle, cfg["data.downsample"])
    return handle


def _default_surrogate_target(bounds: GeneBounds) -> ArchGenome:
    """Mid-box architecture with (max+1)//2 conv layers; always in bounds."""
    cb, pb = bounds.conv_bounds(), bounds.pool_bounds()
    conv_mid = (cb[:, 0] + cb[:, 1]) / 2.0
    pool_mid = (pb[:, 0] + pb[:, 1]) / 2.0
    n_c = (bounds.max_conv_layers + 1) // 2
    n_p = (bounds.max_pool_layers + 1) // 2
    genome = ArchGenome.from_matrices(np.tile(conv_mid, (n_c, 1)),
                                      np.tile(pool_mid, (n_p, 1)))
    return encode(decode(genome, bounds))


def _make_evaluator(cfg: RunConfig, bounds: GeneBounds):
    if cfg["run.mode"] == "surrogate":
        path = cfg["surrogate.target_arch"]
        target = (deserialize(Path(path).read_text()) if path
                  else _default_surrogate_target(bounds))
        return SurrogateEvaluator(target=target, bounds=bounds)
    if cfg["run.mode"] != "cae":
        raise ConfigError(f"unknown run.mode {cfg['run.mode']!r}")
    train = _resolve_data(cfg, "train")
    return CaeEvaluator(data=train, bounds=bounds,
                        train_epochs=cfg["fitness.train_epochs"],
                        batch_size=cfg["fitness.batch_size"])


# ---------------------------------------------------------------------------
# artifact writers


def write_trajectory(outdir: Path, result: SearchResult) -> None:
    with open(outdir / "trajectory.jsonl", "w") as fh:
        for r in result.trajectory:
            fh.write(json.dumps({"generation": r.generation,
                                 "gbest_fitness": r.gbest_fitness,
                                 "gbest_descriptor": r.gbest_descriptor},
                                sort_keys=True) + "\n")
    with open(outdir / "trajectory.csv", "w") as fh:
        fh.write("generation,gbest_fitness\n")
        for r in result.trajectory:
            fh.write(f"{r.generation},{r.gbest_fitness!r}\n")
    # wall-clock timings live outside the deterministic trajectory files
    with open(outdir / "timings.csv", "w") as fh:
        fh.write("generation,wall_ms\n")
        for r in result.trajectory:
            fh.write(f"{r.generation},{r.wall_ms:.3f}\n")


def write_trajectory_svg(path: Path, result: SearchResult) -> None:
    """Minimal fitness-vs-generation line chart; pure file emission."""
    width, height, margin = 640, 400, 50
    xs = [r.generation for r in result.trajectory]
    ys = [r.gbest_fitness for r in result.trajectory]
    finite = [y for y in ys if np.isfinite(y)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    hi = hi if hi > lo else lo + 1.0
    span_x = max(xs[-1], 1) if xs else 1

    def px(g):
        return margin + (width - 2 * margin) * g / span_x

    def py(f):
        if not np.isfinite(f):
            f = hi
        return height - margin - (height - 2 * margin) * (f - lo) / (hi - lo)

    points = " ".join(f"{px(g):.1f},{py(f):.1f}" for g, f in zip(xs, ys))
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">
<rect width="{width}" height="{height}" fill="white"/>
<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>
<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>
<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>
<text x="{width // 2}" y="{height - 12}" text-anchor="middle" font-size="13">generation</text>
<text x="14" y="{height // 2}" font-size="13" transform="rotate(-90 14 {height // 2})" text-anchor="middle">best fitness</text>
<text x="{margin}" y="{margin - 8}" font-size="11">{hi!r}</text>
<text x="{margin}" y="{height - margin + 16}" font-size="11">{lo!r}</text>
</svg>
"""
    path.write_text(svg)


def _write_resolved(outdir: Path, cfg: RunConfig) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.resolved").write_text(format_config(cfg.values))


# ---------------------------------------------------------------------------
# subcommands


def cmd_search(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    bounds = cfg.bounds()
    evaluator = _make_evaluator(cfg, bounds)  # resolves data before any output
    outdir = Path(args.out)
    _write_resolved(outdir, cfg)
    result = run_search(cfg.pso(), bounds, evaluator, n_jobs=cfg["run.jobs"])
    write_trajectory(outdir, result)
    (outdir / "gbest.arch").write_text(serialize(result.gbest_position))
    if cfg["output.svg"]:
        write_trajectory_svg(outdir / "trajectory.svg", result)
    summary = (f"mode = {cfg['run.mode']}\n"
               f"generations = {len(result.trajectory)}\n"
               f"gbest_fitness = {result.gbest_fitness!r}\n")
    (outdir / "summary.txt").write_text(summary)
    print(summary, end="")
    return 0


def cmd_deep_train(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    genome = deserialize(Path(args.arch).read_text())
    train = _resolve_data(cfg, "train")
    tcfg = cfg.deep_train_cfg()
    want_classifier = tcfg.classifier == CLASSIFIER_FC_HEAD
    test = _resolve_data(cfg, "test") if want_classifier else None
    outdir = Path(args.out)
    _write_resolved(outdir, cfg)

    result = deep_train(genome, train, tcfg, cfg.bounds())
    report = None
    classifier = None
    if want_classifier:
        report, classifier = train_classifier(result.model, train, test, tcfg)
    with open(outdir / "model.ckpt", "wb") as fh:
        save_checkpoint(fh, result.model, genome_text=serialize(genome),
                        classifier=classifier)
    metrics = format_metrics(result, report)
    (outdir / "metrics.txt").write_text(metrics)
    print(metrics, end="")
    return 0


def cmd_ablate_velocity(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    n_seeds = cfg["ablation.n_seeds"]
    if n_seeds < 2:
        raise ConfigError("ablation.n_seeds must be >= 2")
    bounds = cfg.bounds()
    evaluator = _make_evaluator(cfg, bounds)
    outdir = Path(args.out)
    _write_resolved(outdir, cfg)

    rows = []
    for s in range(n_seeds):
        row = {"seed": s}
        for mode in (X_REFERENCE, GBEST_REFERENCE):
            pso_cfg = PsoConfig(
                inertia_w=cfg["pso.inertia_w"], c1=cfg["pso.c1"], c2=cfg["pso.c2"],
                population_size=cfg["pso.population_size"],
                max_generations=cfg["pso.max_generations"],
                v_max_fraction=cfg["pso.v_max_fraction"],
                reference_mode=mode, seed=derive_seed(cfg["run.seed"], 5, s))
            result = run_search(pso_cfg, bounds, evaluator, n_jobs=cfg["run.jobs"])
            rundir = outdir / f"seed{s:02d}_{mode}"
            rundir.mkdir(parents=True, exist_ok=True)
            write_trajectory(rundir, result)
            row[mode] = result.gbest_fitness
            lengths = result.length_history
            row[f"{mode}_collapsed_gen2"] = all(
                len(set(gen)) == 1 for gen in lengths[1:]) if len(lengths) > 1 else True
            row[f"{mode}_lengths_preserved"] = all(
                gen == lengths[0] for gen in lengths)
        rows.append(row)

    with open(outdir / "ablation.csv", "w") as fh:
        fh.write("seed,x_reference_fitness,gbest_reference_fitness,"
                 "x_lengths_preserved,gbest_collapsed_by_gen2\n")
        for row in rows:
            fh.write(f"{row['seed']},{row[X_REFERENCE]!r},{row[GBEST_REFERENCE]!r},"
                     f"{str(row[f'{X_REFERENCE}_lengths_preserved']).lower()},"
                     f"{str(row[f'{GBEST_REFERENCE}_collapsed_gen2']).lower()}\n")
    med_x = statistics.median(r[X_REFERENCE] for r in rows)
    med_g = statistics.median(r[GBEST_REFERENCE] for r in rows)
    report = (f"seeds = {n_seeds}\n"
              f"median_x_reference = {med_x!r}\n"
              f"median_gbest_reference = {med_g!r}\n")
    (outdir / "report.txt").write_text(report)
    print(report, end="")
    return 0


# ---------------------------------------------------------------------------
# selfcheck


def _selfcheck_rows(perturb: str = "") -> list[tuple[str, float, float]]:
    from .nn import ops
    rows = []
    rng = derive_rng(20240)

    worst = 0.0
    for _ in range(20):
        n, h, w = 1 + int(rng.integers(2)), int(rng.integers(3, 8)), int(rng.integers(3, 8))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        fh, fw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(n, h, w, cin))
        f = rng.normal(size=(fh, fw, cin, cout))
        b = rng.normal(size=cout)
        fast = ops.conv2d_same(x, f, b, stride)
        slow = reference.conv2d_same_bruteforce(x, f, b, stride)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    rows.append(("conv_vs_bruteforce", worst, 1e-10))

    worst = 0.0
    for _ in range(10):
        th, tw = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        fh, fw, stride = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        x = rng.normal(size=(1, th, tw, cin))
        f = rng.normal(size=(fh, fw, cin, cout))
        y = ops.conv2d_same(x, f, np.zeros(cout), stride)
        g = rng.normal(size=y.shape)
        lhs = float(np.sum(y * g))
        rhs = float(np.sum(x * ops.deconv(g, f, np.zeros(cin), stride, (th, tw))))
        worst = max(worst, abs(lhs - rhs))
    rows.append(("conv_deconv_adjoint", worst, 1e-8))

    rows.extend(_gradcheck_rows(perturb))

    state_params = {"w": np.array([1.0])}
    state = AdamState(state_params)
    ref = reference.adam_reference(1.0, lambda w: 2.0 * w, steps=50)
    worst = 0.0
    for t in range(50):
        adam_step(state_params, {"w": 2.0 * state_params["w"]}, state)
        worst = max(worst, abs(float(state_params["w"][0]) - ref[t]))
    rows.append(("adam_vs_reference", worst, 1e-12))
    return rows


def _gradcheck_rows(perturb: str = "") -> list[tuple[str, float, float]]:
    from .genome import DecodedArchitecture, DecodedConvLayer, DecodedPoolLayer
    arch = DecodedArchitecture(
        (DecodedConvLayer(3, 3, 1, 1, 2, 0.001), DecodedConvLayer(2, 2, 1, 1, 3, 0.002)),
        (DecodedPoolLayer(2, 2, 2, 2),))
    rng = derive_rng(77)
    model = FcaeModel(arch, (8, 8, 1), rng)
    batch = rng.uniform(0.1, 0.9, size=(2, 8, 8, 1))
    forward_backward(model, batch, train=False)
    analytic = {k: v.copy() for k, v in model.grad_arrays().items()}
    if perturb:
        if perturb not in analytic:
            raise ConfigError(f"--perturb: no parameter named {perturb!r} "
                              f"(have: {', '.join(sorted(analytic))})")
        analytic[perturb] = analytic[perturb] + 1e-2

    def loss() -> float:
        xhat = model.forward(batch, train=False)
        value = float(np.sum((xhat - batch) ** 2) / batch.shape[0])
        for coef, conv in model.l2_terms():
            value += coef * float(np.sum(conv.params["w"] ** 2))
        return value

    rows = []
    for name, arr in model.param_arrays().items():
        fd = reference.finite_diff_grad(loss, arr)
        rows.append((f"gradient:{name}", reference.relative_error(analytic[name], fd), 1e-4))
    return rows


def cmd_selfcheck(args) -> int:
    rows = _selfcheck_rows(perturb=args.perturb or "")
    failed = []
    print(f"{'check':<34}{'observed':>14}{'allowed':>12}  status")
    for name, observed, allowed in rows:
        ok = observed <= allowed
        if not ok:
            failed.append(name)
        print(f"{name:<34}{observed:>14.3e}{allowed:>12.0e}  {'PASS' if ok else 'FAIL'}")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    with open(args.ckpt, "rb") as fh:
        fcae, classifier, _ = load_checkpoint(fh)
    handle = _resolve_data(cfg, args.split)
    errors = []
    for x, _ in datamod.batches(handle, 256, 0, shuffle=False):
        xhat = fcae.forward(x, train=False)
        errors.append(float(np.sum((xhat - x) ** 2) / x.shape[0]))
    print(f"recon_error = {float(np.mean(errors))!r}")
    if classifier is not None and handle.labels is not None:
        print(f"accuracy = {evaluate_accuracy(classifier, handle)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcae",
        description="Swarm search over convolutional auto-encoder architectures")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="config file with dotted keys")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--jobs", type=int, help="concurrent fitness evaluations")
        p.add_argument("--dataset", help="mnist | cifar10 | synth:<kind>")
        p.add_argument("--data-root", dest="data_root",
                       help="dataset directory (default: $FCAE_DATA_DIR)")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("search", help="run the architecture search")
    common(p)
    p.add_argument("--mode", choices=["cae", "surrogate"])
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("deep-train", help="train a chosen architecture at length")
    common(p)
    p.add_argument("--arch", required=True, help="architecture descriptor file")
    p.set_defaults(fn=cmd_deep_train, mode=None)

    p = sub.add_parser("ablate-velocity",
                       help="matched-seed comparison of velocity reference modes")
    common(p)
    p.add_argument("--mode", choices=["cae", "surrogate"])
    p.set_defaults(fn=cmd_ablate_velocity)

    p = sub.add_parser("selfcheck", help="numeric cross-checks of the engine")
    p.add_argument("--perturb", help="test hook: corrupt this parameter's gradient")
    p.set_defaults(fn=cmd_selfcheck)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    common(p, out=False)
    p.add_argument("--ckpt", required=True, help="model checkpoint path")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(fn=cmd_eval, mode=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DescriptorError, FileNotFoundError,
            datamod.IdxParseError, datamod.CifarParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
