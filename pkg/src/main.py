"""
Pipeline commands behind the `vidgp` entry point.

Output layout under cfg["out"]:
    data/                 training corpus (FIELD files + meta.txt)
    truth/                held-out truth field, seed record, obs_<noise>/ observation sets
    models/               vae.params, surrogate_<n>.params and their training traces
    infer/<method>/noise_<level>/   posterior mean/std, traces, latent samples
    gradcheck/            agreement.csv
    report.csv            one row per inference run
    logs/                 per-component log files
"""

import os
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.actions.pcn.pcn import PCNConfig, run_chain
from src.actions.vi.vi_dgp import VIConfig, optimize, posterior_sample
from src.methods.diagnostics import AGREEMENT_COLUMNS, gradient_agreement_study, posterior_stats, relative_l2_error
from src.methods.surrogate import SurrogateConfig, SurrogateModel, train_surrogate
from src.methods.vae import VAEConfig, VAEDecoder, VAEModel, train_vae
from src.physics import darcy
from src.priors.channel import ChannelSpec, sample_channel
from src.priors.datasets import dataset_normalization, sample_channel_dataset, sample_grf_dataset
from src.priors.grf import GRFSpec, sample_grf
from src.shared.backends import AdjointBackend, GradientBackend, SurrogateBackend, WrappedAdjointSurrogate, decode_numpy
from src.utils.config import RunConfig, write_config_snapshot
from src.utils.csv_io import append_csv_row, read_csv, write_csv
from src.utils.evaluation_counter import clear_run_context, get_evaluation_count, reset_counters, set_run_context
from src.utils.field_io import (
    format_number, read_dataset, read_field, read_observations,
    write_dataset, write_field, write_metadata, write_observations, write_param_file,
)
from src.utils.grid_field import Grid2D, ScalarField, add_noise, uniform_observation_plan
from src.utils.logger import get_logger

REPORT_COLUMNS = [
    "method", "noise_level", "seed", "iterations", "inference_seconds", "forward_evals",
    "rel_l2_error", "prior_mean_error", "acceptance_rate",
]
SUMMARY_COLUMNS = ["method", "noise_level", "runs", "median_rel_l2_error", "median_inference_seconds", "median_forward_evals"]

# Stream tags: each pipeline stage draws from default_rng([seed, tag]) so stages are independent.
STREAM_DATA, STREAM_TRUTH, STREAM_NOISE, STREAM_DGP, STREAM_SURROGATE, STREAM_INFER, STREAM_GRADCHECK = range(7)


def _stream(cfg: RunConfig, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([cfg["seed"], tag, *extra])


def _path(cfg: RunConfig, *parts: str) -> str:
    return os.path.join(cfg["out"], *parts)


def _require(path: str, what: str, command: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"[ERROR] Missing {what}: {path} (run `vidgp {command}` first)")
    return path


def _grid(cfg: RunConfig) -> Grid2D:
    return Grid2D(cfg["nx"], cfg["ny"])


def level_tag(noise_level: float) -> str:
    """Shortest round-trip spelling of a noise level, used in directory names."""
    return repr(float(noise_level))


def obs_dir_name(noise_level: float) -> str:
    return f"obs_{level_tag(noise_level)}"


# ---------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------

def _channel_spec(cfg: RunConfig) -> ChannelSpec:
    return ChannelSpec(
        n_channels=cfg["n_channels"],
        width_range=(cfg["channel_width_min"], cfg["channel_width_max"]),
        amplitude_range=(cfg["channel_amp_min"], cfg["channel_amp_max"]),
        wavelength_range=(cfg["channel_wavelength_min"], cfg["channel_wavelength_max"]),
        k_low=cfg["k_low"],
        k_high=cfg["k_high"],
    )


def _sample_truth(cfg: RunConfig, grid: Grid2D) -> Tuple[ScalarField, Dict[str, str]]:
    rng = _stream(cfg, STREAM_TRUTH)
    if cfg["prior"] == "grf":
        l1 = float(rng.uniform(cfg["length_min"], cfg["length_max"]))
        l2 = float(rng.uniform(cfg["length_min"], cfg["length_max"]))
        spec = GRFSpec(mean=cfg["grf_mean"], sigma_k2=cfg["sigma_k2"], l1=l1, l2=l2)
        return sample_grf(grid, spec, rng), {"l1": format_number(l1), "l2": format_number(l2)}
    return sample_channel(grid, _channel_spec(cfg), rng), {}


def cmd_gen_data(cfg: RunConfig) -> Dict[str, str]:
    """
    Write the training corpus, a held-out truth field and its observations.

    Observations are written once per noise level (cfg noise_level plus
    noise_levels); every level reuses the same standard-normal draws.
    """
    logger = get_logger("gen_data")
    grid = _grid(cfg)
    data_dir, truth_dir = _path(cfg, "data"), _path(cfg, "truth")

    rng = _stream(cfg, STREAM_DATA)
    if cfg["prior"] == "grf":
        dataset = sample_grf_dataset(
            grid, cfg["n_lengths"], cfg["n_per_length"], (cfg["length_min"], cfg["length_max"]),
            rng, mean=cfg["grf_mean"], sigma_k2=cfg["sigma_k2"], workers=cfg["workers"],
        )
    else:
        dataset = sample_channel_dataset(grid, cfg["n_channel_fields"], _channel_spec(cfg), rng, workers=cfg["workers"])
    write_dataset(data_dir, dataset)
    write_config_snapshot(data_dir, cfg)
    logger.log_phase("[Dataset]", f"{len(dataset)} {cfg['prior']} fields on {grid.nx}x{grid.ny}")

    truth, truth_meta = _sample_truth(cfg, grid)
    os.makedirs(truth_dir, exist_ok=True)
    write_field(os.path.join(truth_dir, "field.txt"), truth)
    write_metadata(os.path.join(truth_dir, "seed.txt"), {"seed": str(cfg["seed"]), "prior": cfg["prior"], **truth_meta})
    write_config_snapshot(truth_dir, cfg)

    plan = uniform_observation_plan(cfg["obs_per_axis"])
    clean = darcy.forward(truth, plan, cfg["f_const"])
    levels = sorted(set(cfg["noise_levels"]) | {cfg["noise_level"]})
    for level in levels:
        obs = add_noise(clean, level, _stream(cfg, STREAM_NOISE))
        write_observations(os.path.join(truth_dir, obs_dir_name(level)), plan, obs, extra={"seed": str(cfg["seed"])})
        logger.log_state(noise_level=level, n_obs=len(obs))
    return {"data": data_dir, "truth": truth_dir}


# ---------------------------------------------------------------------
# train-dgp / train-surrogate
# ---------------------------------------------------------------------

def cmd_train_dgp(cfg: RunConfig) -> Tuple[str, List[float]]:
    dataset = read_dataset(_require(_path(cfg, "data"), "training corpus", "gen-data"))
    config = VAEConfig.for_prior(
        cfg["prior"], dataset.grid, cfg["latent_dim"], dataset_normalization(dataset),
        decoder_hidden=cfg["vae_hidden"], mc_samples=cfg["vae_mc_samples"],
        epochs=cfg["vae_epochs"], batch_size=cfg["vae_batch"], lr=cfg["vae_lr"],
    )
    model, trace = train_vae(dataset, config, _stream(cfg, STREAM_DGP))

    models_dir = _path(cfg, "models")
    os.makedirs(models_dir, exist_ok=True)
    path = os.path.join(models_dir, "vae.params")
    model.save(path)
    write_csv(os.path.join(models_dir, "vae_trace.csv"), ["epoch", "elbo"], list(enumerate(trace)))
    write_config_snapshot(models_dir, cfg)
    return path, trace


def surrogate_path(cfg: RunConfig, n_train: int) -> str:
    return _path(cfg, "models", f"surrogate_{n_train}.params")


def cmd_train_surrogate(cfg: RunConfig, sizes: Optional[Sequence[int]] = None) -> Dict[int, List[float]]:
    """Train one surrogate per corpus size (default: n_train) on the first n fields of the corpus."""
    logger = get_logger("train_surrogate")
    data_dir = _require(_path(cfg, "data"), "training corpus", "gen-data")
    config = SurrogateConfig(
        nx=cfg["nx"], ny=cfg["ny"], backend=cfg["surrogate_backend"], hidden=cfg["surrogate_hidden"],
        channels=cfg["surrogate_channels"], gamma=cfg["surrogate_gamma"], epochs=cfg["surrogate_epochs"],
        batch_size=cfg["surrogate_batch"], lr=cfg["surrogate_lr"], schedule=cfg["surrogate_schedule"],
        f_const=cfg["f_const"],
    )
    models_dir = _path(cfg, "models")
    os.makedirs(models_dir, exist_ok=True)

    traces = {}
    for n in (sizes or [cfg["n_train"]]):
        dataset = read_dataset(data_dir, limit=n)
        if len(dataset) < n:
            logger.log(f"Corpus holds {len(dataset)} fields, fewer than the requested {n}")
        model, trace = train_surrogate(dataset, config, _stream(cfg, STREAM_SURROGATE, n))
        model.save(surrogate_path(cfg, n))
        write_csv(os.path.join(models_dir, f"surrogate_{n}_trace.csv"), ["epoch", "J"], list(enumerate(trace)))
        traces[n] = trace
    write_config_snapshot(models_dir, cfg)
    return traces


# ---------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------

def _load_decoder(cfg: RunConfig) -> VAEDecoder:
    return VAEDecoder(VAEModel.load(_require(_path(cfg, "models", "vae.params"), "generative prior", "train-dgp")))


def _load_observations(cfg: RunConfig, noise_level: float):
    directory = _require(_path(cfg, "truth", obs_dir_name(noise_level)), "observations", "gen-data")
    return read_observations(directory)


def _make_backend(cfg: RunConfig, method: str, plan, obs) -> GradientBackend:
    if method.endswith("-nn"):
        path = _require(surrogate_path(cfg, cfg["n_train"]), "surrogate", "train-surrogate")
        return SurrogateBackend(SurrogateModel.load(path), plan, obs)
    return AdjointBackend(_grid(cfg), plan, obs, cfg["f_const"])


def _decode_fields(decoder: VAEDecoder, latent: np.ndarray, chunk: int = 1000) -> List[ScalarField]:
    fields = []
    for start in range(0, latent.shape[0], chunk):
        fields.extend(ScalarField(decoder.grid, row) for row in decode_numpy(decoder, latent[start:start + chunk]))
    return fields


def infer_dir(cfg: RunConfig, method: str, noise_level: float) -> str:
    return _path(cfg, "infer", method, f"noise_{level_tag(noise_level)}")


def cmd_infer(cfg: RunConfig) -> Dict[str, object]:
    """
    Run one inference method and write the posterior summary.

    vi-* methods optimize the variational family, mcmc-* run a pCN chain;
    *-nn use the surrogate, the others the adjoint solver.
    """
    method, noise = cfg["method"], cfg["noise_level"]
    logger = get_logger("infer")
    decoder = _load_decoder(cfg)
    plan, obs = _load_observations(cfg, noise)
    truth = read_field(_require(_path(cfg, "truth", "field.txt"), "truth field", "gen-data"))
    backend = _make_backend(cfg, method, plan, obs)
    out_dir = infer_dir(cfg, method, noise)
    os.makedirs(out_dir, exist_ok=True)
    rng = _stream(cfg, STREAM_INFER)

    run_id = f"{method}/{level_tag(noise)}/{cfg['seed']}"
    reset_counters(run_id)
    set_run_context(run_id)
    acceptance: object = "N/A"
    try:
        if method.startswith("vi"):
            config = VIConfig(
                iterations=cfg["vi_iterations"], samples=cfg["vi_samples"], lr_mu=cfg["vi_lr_mu"],
                lr_logvar=cfg["vi_lr_logvar"], entropy=cfg["vi_entropy"], optimizer=cfg["vi_optimizer"],
                clip=cfg["vi_clip"], n_posterior=cfg["n_posterior"], record_timing=cfg["record_timing"],
            )
            tic = time.perf_counter()
            params, _ = optimize(config, backend, decoder, rng, trace_path=os.path.join(out_dir, "trace.csv"))
            seconds = time.perf_counter() - tic
            iterations = config.iterations
            samples = posterior_sample(params, decoder, config.n_posterior, rng)
            blocks = [("mu", 0, params.dim, (params.dim,)), ("logvar", params.dim, params.dim, (params.dim,))]
            write_param_file(os.path.join(out_dir, "variational.params"), blocks, np.concatenate([params.mu, params.logvar]))
        else:
            config = PCNConfig(
                beta=cfg["pcn_beta"], iterations=cfg["pcn_iterations"],
                burn_in=cfg["pcn_burn_in"], thin=cfg["pcn_thin"],
            )
            tic = time.perf_counter()
            result = run_chain(config, backend, decoder, rng, chain_path=os.path.join(out_dir, "chain.csv"))
            seconds = time.perf_counter() - tic
            iterations = config.iterations
            acceptance = result.acceptance_rate
            samples = _decode_fields(decoder, result.samples)
            shape = result.samples.shape
            write_param_file(os.path.join(out_dir, "latent_samples.params"), [("z", 0, result.samples.size, shape)], result.samples)
        forward_evals = sum(get_evaluation_count(run_id, kind) for kind in ("forward", "surrogate"))
    finally:
        clear_run_context()

    if not cfg["record_timing"]:
        seconds = 0.0
    summary = posterior_stats(samples, truth)
    write_field(os.path.join(out_dir, "mean.txt"), summary.mean)
    write_field(os.path.join(out_dir, "std.txt"), summary.std)
    zero_error = relative_l2_error(ScalarField(truth.grid, np.zeros(truth.grid.size)), truth)
    row = {
        "method": method, "noise_level": noise, "seed": cfg["seed"], "iterations": iterations,
        "inference_seconds": seconds, "forward_evals": forward_evals, "rel_l2_error": summary.rel_error,
        "prior_mean_error": zero_error, "acceptance_rate": acceptance,
    }
    write_metadata(os.path.join(out_dir, "summary.txt"), {k: str(v) for k, v in row.items()} | {"std": "population"})
    write_config_snapshot(out_dir, cfg)
    append_csv_row(_path(cfg, "report.csv"), REPORT_COLUMNS, row)
    logger.log_state(**{k: v for k, v in row.items() if k != "method"})
    return row


# ---------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------

def cmd_gradcheck(cfg: RunConfig) -> Tuple[List[Tuple[str, str, float, int]], bool]:
    """
    Gradient agreement of every trained surrogate size against the adjoint solver.

    The verdict passes when the mu-block cos alpha never decreases with
    corpus size and the largest size reaches cos_threshold.
    """
    decoder = _load_decoder(cfg)
    plan, obs = _load_observations(cfg, cfg["noise_level"])
    reference = AdjointBackend(_grid(cfg), plan, obs, cfg["f_const"])
    n_pairs = cfg["n_gradient_pairs"]

    self_test = WrappedAdjointSurrogate(_grid(cfg), plan, obs, cfg["f_const"])
    rows = gradient_agreement_study(self_test, reference, decoder, n_pairs, _stream(cfg, STREAM_GRADCHECK)).rows("self")

    cos_by_size = []
    for n in cfg["surrogate_sizes"]:
        if not os.path.exists(surrogate_path(cfg, n)):
            continue
        candidate = SurrogateBackend(SurrogateModel.load(surrogate_path(cfg, n)), plan, obs)
        report = gradient_agreement_study(candidate, reference, decoder, n_pairs, _stream(cfg, STREAM_GRADCHECK))
        rows.extend(report.rows(str(n)))
        cos_by_size.append(report.cos_mu)
    if not cos_by_size:
        raise FileNotFoundError("[ERROR] No surrogate found for any of surrogate_sizes (run `vidgp train-surrogate --all-sizes` first)")

    monotone = all(b >= a for a, b in zip(cos_by_size, cos_by_size[1:]))
    passed = monotone and cos_by_size[-1] >= cfg["cos_threshold"]
    out_dir = _path(cfg, "gradcheck")
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "agreement.csv"), AGREEMENT_COLUMNS, rows)
    write_metadata(os.path.join(out_dir, "verdict.txt"), {
        "passed": str(passed).lower(), "monotone": str(monotone).lower(),
        "cos_threshold": format_number(cfg["cos_threshold"]),
    })
    write_config_snapshot(out_dir, cfg)
    return rows, passed


# ---------------------------------------------------------------------
# render / report
# ---------------------------------------------------------------------

def to_graymap(field: ScalarField) -> bytes:
    """
    Binary PGM (P5), one pixel per cell, rows in field order.

    Min-max normalized to 0..255; a constant field maps to 0.
    """
    values = field.as_array()
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        pixels = np.rint(255.0 * (values - lo) / (hi - lo))
    else:
        pixels = np.zeros_like(values)
    header = f"P5\n{field.grid.nx} {field.grid.ny}\n255\n".encode("ascii")
    return header + pixels.astype(np.uint8).tobytes()


def cmd_render(field_path: str, image_path: str) -> str:
    field = read_field(field_path)
    parent = os.path.dirname(image_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(image_path, "wb") as f:
        f.write(to_graymap(field))
    return image_path


def summarize_report(rows: List[Dict[str, str]]) -> List[Tuple]:
    """Median error, time and forward evaluations per (method, noise level)."""
    groups: Dict[Tuple[str, float], List[Dict[str, str]]] = {}
    for row in rows:
        groups.setdefault((row["method"], float(row["noise_level"])), []).append(row)
    summary = []
    for (method, noise), members in sorted(groups.items()):
        summary.append((
            method, noise, len(members),
            float(np.median([float(r["rel_l2_error"]) for r in members])),
            float(np.median([float(r["inference_seconds"]) for r in members])),
            float(np.median([float(r["forward_evals"]) for r in members])),
        ))
    return summary


def cmd_report(cfg: RunConfig) -> List[Tuple]:
    rows = read_csv(_require(_path(cfg, "report.csv"), "inference report", "infer"))
    summary = summarize_report(rows)
    write_csv(_path(cfg, "summary.csv"), SUMMARY_COLUMNS, summary)
    return summary
