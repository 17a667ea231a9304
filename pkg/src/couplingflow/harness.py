"""Command-line harness: configuration, seeding, dispatch, persistence.

Every subcommand validates its parameters before any computation, derives
all randomness from the master seed through named Philox streams, and
writes outputs atomically (temp file + rename) into the output directory.
Structured reports are JSON, time series are JSONL/CSV, matrices are MAT1
text. Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from couplingflow import certificates, coupling, decomposer, matcore, metrics
from couplingflow import separation as sep
from couplingflow import trainer, universal
from couplingflow.errors import (
    DivergedRunError,
    EigFailedError,
    EigGapTooSmallError,
    NegativeDeterminantError,
    RetryBudgetExhaustedError,
    SingularMatrixError,
)
from couplingflow.rng import stream

ARTIFACT_VERSION = "0.1.0"

NUMERIC_FAILURES = (DivergedRunError, EigFailedError, EigGapTooSmallError,
                    NegativeDeterminantError, RetryBudgetExhaustedError,
                    SingularMatrixError)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    subcommand: str
    params: dict
    master_seed: int = 0
    output_dir: str = "."


@dataclass
class ResultManifest:
    config_hash: str
    version: str
    files: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parameter schemas: name -> (type, default, allowed-or-None, required)

_SCHEMAS = {
    "decompose": {
        "input": (str, None, None, True),
        "layers_name": (str, "layers.json", None, False),
        "report_name": (str, "report.json", None, False),
    },
    "certify": {
        "input": (str, None, None, True),
        "d": (int, None, None, True),
        "fit_matrices": (int, 0, None, False),
        "restarts": (int, 3, None, False),
        "fit_steps": (int, 4000, None, False),
    },
    "universal": {
        "mode": (str, None, ("padded", "lattice"), True),
        "target": (str, "affine", None, False),
        "dim": (int, 2, None, False),
        "eps": (float, 0.25, None, False),
        "samples": (int, 2048, None, False),
        "truncation": (float, 6.0, None, False),
    },
    "separation": {
        "d": (int, 16, None, False),
        "k": (int, 8, None, False),
        "gamma": (float, 1.0, None, False),
        "eps": (float, 0.5, None, False),
        "samples": (int, 4096, None, False),
    },
    "train-pln": {
        "d": (int, 16, None, False),
        "layers": (str, "1,2,4,8", None, False),
        "target": (str, "gaussian", ("gaussian", "toeplitz"), False),
        "seeds": (int, 5, None, False),
        "steps": (int, 20000, None, False),
        "lr": (float, 1e-4, None, False),
        "batch_size": (int, 256, None, False),
    },
    "train-reg": {
        "d": (int, 10, None, False),
        "target": (str, "tanh", ("tanh", "relu", "linear"), False),
        "arch": (str, "coupling", ("coupling", "mlp"), False),
        "steps": (int, 4000, None, False),
        "lr": (float, 1e-3, None, False),
        "batch_size": (int, 128, None, False),
    },
    "train-mle": {
        "dataset": (str, "four_gaussians",
                    ("gaussian", "four_gaussians", "swissroll", "two_moons", "checkerboard"), False),
        "padding": (str, "none", ("none", "zero", "gaussian"), False),
        "steps": (int, 3000, None, False),
        "lr": (float, 1e-3, None, False),
        "batch_size": (int, 128, None, False),
    },
    "plot-data": {
        "records": (str, None, None, True),  # comma-separated JSONL paths
        "csv_name": (str, "plot_data.csv", None, False),
    },
}


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    if config.subcommand not in _SCHEMAS:
        raise ConfigError(f"unknown subcommand {config.subcommand!r}")
    schema = _SCHEMAS[config.subcommand]
    unknown = set(config.params) - set(schema)
    if unknown:
        raise ConfigError(f"unknown parameters for {config.subcommand}: {sorted(unknown)}")
    cleaned = {}
    for name, (typ, default, allowed, required) in schema.items():
        if name in config.params and config.params[name] is not None:
            try:
                val = typ(config.params[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"parameter {name}: {exc}") from exc
        elif required:
            raise ConfigError(f"missing required parameter {name!r}")
        else:
            val = default
        if allowed is not None and val not in allowed:
            raise ConfigError(f"parameter {name} must be one of {allowed}, got {val!r}")
        cleaned[name] = val
    if not isinstance(config.master_seed, int):
        raise ConfigError("master seed must be an integer")
    return ExperimentConfig(subcommand=config.subcommand, params=cleaned,
                            master_seed=config.master_seed, output_dir=config.output_dir)


# ---------------------------------------------------------------------------
# persistence helpers


def _float_safe(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def atomic_write_text(path: str, text: str):
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, default=_float_safe) + "\n")


def record_jsonl(record: trainer.RunRecord, meta: dict) -> str:
    lines = []
    cols = {k: v for k, v in record.metrics.items() if k != "step"}
    for i, step in enumerate(record.metrics.get("step", [])):
        row = dict(meta, seed=record.seed, step=step)
        for key, series in cols.items():
            row[key] = series[i]
        lines.append(json.dumps(row, default=_float_safe))
    return "\n".join(lines) + "\n"


def emit_plot_data(jsonl_texts) -> str:
    """Long-format CSV (experiment, d, variant, seed, step, metric, value)
    from RunRecord JSONL documents."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment", "d", "variant", "seed", "step", "metric", "value"])
    known = {"experiment", "d", "variant", "seed", "step"}
    for text in jsonl_texts:
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            base = [row.get("experiment", ""), row.get("d", ""), row.get("variant", ""),
                    row.get("seed", ""), row.get("step", "")]
            for key in sorted(set(row) - known):
                writer.writerow(base + [key, repr(float(row[key]))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommand implementations


def _run_decompose(params, seed, outdir, manifest):
    t = matcore.read_mat1(params["input"])
    result = decomposer.decompose(t)
    layers_path = os.path.join(outdir, params["layers_name"])
    atomic_write_text(layers_path, coupling.sequence_to_json(result.layers) + "\n")
    report_path = os.path.join(outdir, params["report_name"])
    write_json(report_path, {
        "matrix_count": result.matrix_count,
        "layer_pair_count": result.layer_pair_count,
        "residual": result.residual,
        "stage_log": result.stage_log,
        "warnings": result.warnings,
    })
    manifest.files["layers"] = layers_path
    manifest.files["report"] = report_path


def _run_certify(params, seed, outdir, manifest):
    t = matcore.read_mat1(params["input"])
    d = params["d"]
    cert = certificates.certify_not_a4(t, d)
    doc = {
        "verdict": cert.verdict,
        "schur_spectrum": [[float(v.real), float(v.imag)] for v in cert.schur_spectrum],
        "reason_luru": cert.reason_luru,
        "max_imag": cert.max_imag,
        "reason_rlrl": cert.reason_rlrl,
        "trace_value": cert.trace_value,
    }
    if params["fit_matrices"]:
        config = trainer.TrainConfig(steps=params["fit_steps"], batch_size=128, lr=1e-3)
        doc["fit_residual"] = certificates.falsify_by_fit(
            t, params["fit_matrices"], params["restarts"], config)
        doc["fit_matrices"] = params["fit_matrices"]
    path = os.path.join(outdir, "certificate.json")
    write_json(path, doc)
    manifest.files["certificate"] = path


def _affine_target(dim: int):
    linear = np.eye(dim)
    for i in range(dim):
        linear[i, i] = 1.2 if i % 2 == 0 else 0.8
        if i + 1 < dim:
            linear[i, i + 1] = 0.3
    shift = np.array([0.5 if i % 2 == 0 else -0.3 for i in range(dim)])
    return universal.AffineTransport(shift=shift, linear=linear)


def _load_target(spec_str: str, dim: int):
    if spec_str == "affine":
        return _affine_target(dim)
    if spec_str.startswith("quantile:"):
        with open(spec_str.split(":", 1)[1]) as fh:
            doc = json.load(fh)
        return universal.quantile_transport([(tbl["values"], tbl["cdf"]) for tbl in doc])
    raise ConfigError(f"unknown target {spec_str!r}")


def _run_universal(params, seed, outdir, manifest):
    n_samples = params["samples"]
    eps = params["eps"]
    if params["mode"] == "padded":
        phi = _load_target(params["target"], params["dim"])
        net = universal.build_padded_net(phi, m=params["truncation"])
        schedule = {"mode": "padded", "truncation": params["truncation"]}
    else:
        phi = _load_target(params["target"], 2 * params["dim"])
        eps1 = eps * eps / 4.0
        eps2 = eps1 * eps1 / 4.0
        net = universal.build_lattice_net(phi, eps, eps1, eps2, m=params["truncation"])
        schedule = {"mode": "lattice", "eps": eps, "eps1": eps1, "eps2": eps2}
    inputs = universal.gaussian_inputs(net, n_samples, seed)
    pushed = net.apply(inputs)
    reference = universal.reference_pushforward(net, inputs)
    plan = metrics.empirical_wasserstein(pushed, reference, metrics.W2)

    samples_path = os.path.join(outdir, "samples.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i}" for i in range(pushed.shape[1])])
    for row in pushed:
        writer.writerow([repr(float(v)) for v in row])
    atomic_write_text(samples_path, buf.getvalue())
    metrics_path = os.path.join(outdir, "metrics.json")
    write_json(metrics_path, dict(schedule, empirical_w2=plan.cost, samples=n_samples,
                                  seed=seed))
    manifest.files["samples"] = samples_path
    manifest.files["metrics"] = metrics_path


def _run_separation(params, seed, outdir, manifest):
    d, k = params["d"], params["k"]
    gamma, eps = params["gamma"], params["eps"]
    n = params["samples"]

    mixture = sep.random_mixture(k, d, gamma, seed)
    delta = sep.selector_delta(eps, gamma, d, k)
    net = sep.build_selector_net(mixture, delta)
    rng = stream(seed, "separation-cli", "selector")
    h = rng.standard_normal(n)
    z = rng.standard_normal((n, d))
    pushed = net.evaluate(h, z)
    exact = net.evaluate_exact(h, z)
    plan = metrics.empirical_wasserstein(pushed, exact, metrics.W1)

    codebook = None
    codebook_stats = {"requested": 2 * k, "built": 0}
    try:
        codebook = sep.well_separated_vectors(d, 0.5, 2 * k, seed)
        codebook_stats["built"] = codebook.vectors.shape[0]
    except RetryBudgetExhaustedError as exc:
        codebook_stats["error"] = str(exc)
    witness = None
    if codebook is not None:
        mu = sep.mixture_from_directions(codebook.vectors[:k], gamma)
        nu = sep.mixture_from_directions(codebook.vectors[k:2 * k], gamma)
        witness = sep.w1_witness(sep.exact_mixture_sample(mu, n, seed),
                                 sep.exact_mixture_sample(nu, n, seed + 1),
                                 mu.means, gamma)
    bounds = sep.SeparationBounds(lipschitz=10.0, radius=10.0, d_params=k * d,
                                  params_per_layer=d, k=k, c2=gamma**2)
    report = {
        "selector_w1_estimate": plan.cost,
        "selector_w1_bound": sep.selector_w1_bound(net),
        "delta": delta,
        "codebook": codebook_stats,
        "witness": witness,
        "witness_scale": gamma * np.sqrt(d),
        "epsnet_log_size": sep.epsnet_log_size(bounds, eps),
        "kl_lower_bound": sep.kl_lower_bound(witness or 0.0, bounds.c2),
    }
    path = os.path.join(outdir, "report.json")
    write_json(path, report)
    manifest.files["report"] = path


def _run_train_pln(params, seed, outdir, manifest):
    config = trainer.TrainConfig(lr=params["lr"], steps=params["steps"],
                                 batch_size=params["batch_size"], seeds=params["seeds"],
                                 target_kind=params["target"] + "_matrix")
    layer_counts = [int(x) for x in params["layers"].split(",")]
    texts = []
    summary = {}
    for n_layers in layer_counts:
        finals = []
        for s in range(params["seeds"]):
            record = trainer.train_pln(config, params["d"], n_layers, seed + s)
            meta = {"experiment": "train-pln", "d": params["d"], "variant": n_layers}
            texts.append(record_jsonl(record, meta))
            finals.append(record.final["frobenius_error"])
        summary[str(n_layers)] = {
            "median_frobenius_error": float(np.median(finals)),
            "finals": finals,
        }
    jsonl_path = os.path.join(outdir, "pln_records.jsonl")
    atomic_write_text(jsonl_path, "".join(texts))
    summary_path = os.path.join(outdir, "pln_summary.json")
    write_json(summary_path, summary)
    manifest.files["records"] = jsonl_path
    manifest.files["summary"] = summary_path


def _run_train_reg(params, seed, outdir, manifest):
    config = trainer.TrainConfig(lr=params["lr"], steps=params["steps"],
                                 batch_size=params["batch_size"], seeds=1)
    target = {"tanh": "elementwise_tanh", "relu": "elementwise_relu",
              "linear": "linear"}[params["target"]]
    arch = {"coupling": "coupling_stack", "mlp": "small_mlp"}[params["arch"]]
    record = trainer.train_coupling_regression(config, params["d"], target, arch, seed)
    meta = {"experiment": "train-reg", "d": params["d"],
            "variant": f"{params['target']}/{params['arch']}"}
    jsonl_path = os.path.join(outdir, "reg_records.jsonl")
    atomic_write_text(jsonl_path, record_jsonl(record, meta))
    summary_path = os.path.join(outdir, "reg_summary.json")
    write_json(summary_path, {"final": record.final})
    manifest.files["records"] = jsonl_path
    manifest.files["summary"] = summary_path


def _run_train_mle(params, seed, outdir, manifest):
    config = trainer.TrainConfig(lr=params["lr"], steps=params["steps"],
                                 batch_size=params["batch_size"], seeds=1)
    record = trainer.train_nvp_mle(params["dataset"], params["padding"], config, seed)
    meta = {"experiment": "train-mle", "d": 2 if params["padding"] == "none" else 4,
            "variant": f"{params['dataset']}/{params['padding']}"}
    jsonl_path = os.path.join(outdir, "mle_records.jsonl")
    atomic_write_text(jsonl_path, record_jsonl(record, meta))
    summary_path = os.path.join(outdir, "mle_summary.json")
    write_json(summary_path, {"final": record.final, "notes": record.notes})
    manifest.files["records"] = jsonl_path
    manifest.files["summary"] = summary_path


def _run_plot_data(params, seed, outdir, manifest):
    texts = []
    for path in params["records"].split(","):
        with open(path) as fh:
            texts.append(fh.read())
    csv_path = os.path.join(outdir, params["csv_name"])
    atomic_write_text(csv_path, emit_plot_data(texts))
    manifest.files["csv"] = csv_path


_RUNNERS = {
    "decompose": _run_decompose,
    "certify": _run_certify,
    "universal": _run_universal,
    "separation": _run_separation,
    "train-pln": _run_train_pln,
    "train-reg": _run_train_reg,
    "train-mle": _run_train_mle,
    "plot-data": _run_plot_data,
}


def run(config: ExperimentConfig) -> ResultManifest:
    """Validate, dispatch, persist. Outputs land in config.output_dir."""
    config = validate_config(config)
    os.makedirs(config.output_dir, exist_ok=True)
    digest = json.dumps({"subcommand": config.subcommand, "params": config.params,
                         "seed": config.master_seed}, sort_keys=True)
    manifest = ResultManifest(config_hash=hashlib.sha256(digest.encode()).hexdigest()[:16],
                              version=ARTIFACT_VERSION)
    start = time.monotonic()
    _RUNNERS[config.subcommand](config.params, config.master_seed, config.output_dir, manifest)
    manifest.durations["total_s"] = time.monotonic() - start
    for path in manifest.files.values():
        if not os.path.exists(path):
            raise RuntimeError(f"manifest references missing file {path}")
    manifest_path = os.path.join(config.output_dir, "manifest.json")
    write_json(manifest_path, {"config_hash": manifest.config_hash,
                               "version": manifest.version,
                               "files": manifest.files,
                               "durations": manifest.durations})
    return manifest


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser():
    parser = argparse.ArgumentParser(prog="couplingflow",
                                     description="coupling-layer decompositions, "
                                                 "certificates, and experiments")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=str, default=".", help="output directory")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config file; overrides flags")
    sub = parser.add_subparsers(dest="subcommand")
    for name, schema in _SCHEMAS.items():
        sp = sub.add_parser(name)
        for pname, (typ, default, allowed, required) in schema.items():
            flag = "--" + pname.replace("_", "-")
            sp.add_argument(flag, dest=pname, type=typ, default=None,
                            choices=allowed, required=False)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        subcommand = doc.get("subcommand", args.subcommand)
        params = doc.get("params", {})
        seed = doc.get("master_seed", args.seed)
        outdir = doc.get("output_dir", args.out)
    else:
        subcommand = args.subcommand
        params = {k: v for k, v in vars(args).items()
                  if k not in ("seed", "out", "config", "subcommand") and v is not None}
        seed = args.seed
        outdir = args.out
    if subcommand is None:
        parser.print_usage(sys.stderr)
        return 1
    config = ExperimentConfig(subcommand=subcommand, params=params,
                              master_seed=seed, output_dir=outdir)
    try:
        run(config)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except NUMERIC_FAILURES as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
