"""Paired real/fake benchmark construction.

Two ways to make a synthetic twin of a real photo with matched content:

- gan: a small transposed-convolution generator is overfit to the single
  image from a fixed latent until reconstruction clears a PSNR gate. The
  twin is what the generator family can express, carrying its upsampling
  fingerprints.
- dm: the image is pushed through a deterministic (eta = 0) denoising
  inversion to the noisiest step and decoded back with the same schedule.
  The noise predictor is pluggable; the bundled zero predictor makes the
  loop an exact identity and exists for calibration, so its pairs are
  flagged degenerate.

Pairs that fail the quality gate are flagged in the pair manifest, never
silently dropped: a twin that does not match its source is a labelling
hazard, not a benchmark row.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path, PurePosixPath

import numpy as np

from .errors import DivergedFitError, ManifestError, ShapeMismatchError
from .manifest import (
    Manifest,
    ManifestRow,
    decoder_version,
    load_image,
    save_png,
)
from .rng import derive_seed
from .validation import as_float_image, center_crop, to_uint8_image

PAIRS_SCHEMA_LINE = "# shuffleprobe-pairs v1"
PROMPT_TEMPLATE = "a photo of {class_name}"


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf when the arrays are equal."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"psnr shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def smoothed_trace(trace, window: int = 50) -> np.ndarray:
    """Moving average with a leading partial window."""
    arr = np.asarray(trace, dtype=np.float64)
    if arr.size == 0:
        return arr
    csum = np.cumsum(np.concatenate([[0.0], arr]))
    idx = np.arange(arr.size) + 1
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# Deterministic denoising inversion (numpy)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DdimSchedule:
    """Cumulative signal levels for T steps plus the conditioning text.

    alphas_bar[t-1] holds the cumulative product at step t; values must
    decrease strictly inside (0, 1). T = 0 (empty schedule) makes both
    directions the identity.
    """

    alphas_bar: np.ndarray
    prompt: str = ""

    def __post_init__(self):
        a = np.asarray(self.alphas_bar, dtype=np.float64)
        object.__setattr__(self, "alphas_bar", a)
        if a.ndim != 1:
            raise ShapeMismatchError("alphas_bar must be a 1-D array")
        if a.size and (a.min() <= 0.0 or a.max() >= 1.0):
            raise ManifestError("alphas_bar values must lie strictly in (0, 1)")
        if a.size > 1 and not np.all(np.diff(a) < 0):
            raise ManifestError("alphas_bar must decrease strictly")

    @property
    def T(self) -> int:
        return int(self.alphas_bar.size)

    def alpha_bar(self, t: int) -> float:
        # Step 0 is the clean image.
        return 1.0 if t == 0 else float(self.alphas_bar[t - 1])


def linear_alpha_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> np.ndarray:
    """Classic linear-beta schedule reduced to its cumulative products."""
    if T < 0:
        raise ManifestError(f"T must be >= 0, got {T}")
    if T == 0:
        return np.empty(0, dtype=np.float64)
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return np.cumprod(1.0 - betas)


class ZeroNoisePredictor:
    """Predicts no noise anywhere; the calibration stub."""

    def __call__(self, x: np.ndarray, t: int, prompt: str) -> np.ndarray:
        return np.zeros_like(x)


class ScaledNoisePredictor:
    """eps_hat = coefficient * x; linear, for closed-form trajectory checks."""

    def __init__(self, coefficient: float):
        self.coefficient = float(coefficient)

    def __call__(self, x: np.ndarray, t: int, prompt: str) -> np.ndarray:
        return self.coefficient * x


def _ddim_step(
    x: np.ndarray, eps: np.ndarray, a_from: float, a_to: float
) -> np.ndarray:
    # Shared update: reproject the implied clean image to a new noise level.
    x0_hat = (x - np.sqrt(1.0 - a_from) * eps) / np.sqrt(a_from)
    return np.sqrt(a_to) * x0_hat + np.sqrt(1.0 - a_to) * eps


def ddim_forward(x0: np.ndarray, schedule: DdimSchedule, predictor) -> np.ndarray:
    """Deterministic inversion from the clean image to the noisiest step.

    At each step the predictor is queried at the current state's index; a
    zero predictor collapses the loop to x_t = sqrt(alpha_bar_t) * x0.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    for t in range(1, schedule.T + 1):
        eps = predictor(x, t - 1, schedule.prompt)
        x = _ddim_step(x, eps, schedule.alpha_bar(t - 1), schedule.alpha_bar(t))
    return x


def ddim_reverse(xT: np.ndarray, schedule: DdimSchedule, predictor) -> np.ndarray:
    """Deterministic decode from the noisiest step back to a clean image."""
    x = np.asarray(xT, dtype=np.float64).copy()
    for t in range(schedule.T, 0, -1):
        eps = predictor(x, t, schedule.prompt)
        x = _ddim_step(x, eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1))
    return x


# ---------------------------------------------------------------------------
# Per-image generator overfit (torch)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GanFitConfig:
    """Architecture and optimization knobs for one twin fit.

    channels lists the feature widths after the initial 4x4 projection; the
    spatial size doubles per entry, so target_size must equal
    4 * 2 ** len(channels). An empty tuple with linear output degenerates
    to a purely affine map of the latent (a convex sanity case).
    """

    latent_dim: int = 100
    channels: tuple[int, ...] = (256, 128, 64, 32)
    target_size: int = 64
    steps: int = 2000
    learning_rate: float = 2e-4
    seed: int = 0
    output_activation: str = "tanh"  # "tanh" | "linear"
    psnr_gate: float = 30.0

    def __post_init__(self):
        expected = 4 * (2 ** len(self.channels))
        if self.target_size != expected:
            raise ShapeMismatchError(
                f"target_size {self.target_size} does not match architecture "
                f"(4 * 2^{len(self.channels)} = {expected})"
            )
        if self.output_activation not in ("tanh", "linear"):
            raise ManifestError(
                f"output_activation must be tanh or linear, "
                f"got {self.output_activation!r}"
            )


@dataclass
class GanFitResult:
    fake: np.ndarray  # float64 in [0, 1]
    loss_trace: list[float]
    psnr_db: float
    final_mse: float
    steps_run: int

    @property
    def reached(self) -> bool:
        return np.isfinite(self.psnr_db) or self.final_mse == 0.0


def _build_generator(cfg: GanFitConfig, torch, nn):
    layers = []
    if cfg.channels:
        widths = list(cfg.channels)
        layers += [
            nn.ConvTranspose2d(cfg.latent_dim, widths[0], 4, 1, 0, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        ]
        for cin, cout in zip(widths[:-1], widths[1:]):
            layers += [
                nn.ConvTranspose2d(cin, cout, 4, 2, 1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            ]
        layers.append(nn.ConvTranspose2d(widths[-1], 3, 4, 2, 1, bias=False))
    else:
        layers.append(nn.ConvTranspose2d(cfg.latent_dim, 3, 4, 1, 0, bias=True))
    if cfg.output_activation == "tanh":
        layers.append(nn.Tanh())
    net = nn.Sequential(*layers)
    for module in net.modules():
        if isinstance(module, nn.ConvTranspose2d):
            nn.init.normal_(module.weight, 0.0, 0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.normal_(module.weight, 1.0, 0.02)
            nn.init.zeros_(module.bias)
    return net


def fit_gan_twin(real_image: np.ndarray, cfg: GanFitConfig) -> GanFitResult:
    """Overfit the generator to one image from a fixed latent.

    Fully seeded and single-threaded, so two runs with the same config
    produce byte-identical twins. Raises DivergedFitError when the final
    loss exceeds the initial loss.
    """
    import torch
    from torch import nn

    real = as_float_image(real_image)
    if real.shape[0] != cfg.target_size or real.shape[1] != cfg.target_size:
        raise ShapeMismatchError(
            f"twin fit expects {cfg.target_size}px square input, "
            f"got {real.shape[1]}x{real.shape[0]}; crop first"
        )
    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        torch.manual_seed(cfg.seed)
        net = _build_generator(cfg, torch, nn)
        target = torch.from_numpy(
            (real * 2.0 - 1.0).transpose(2, 0, 1)[None].astype(np.float32)
        )
        z = torch.randn(1, cfg.latent_dim, 1, 1)
        opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
        loss_fn = nn.MSELoss()
        trace: list[float] = []
        out = None
        for _ in range(cfg.steps):
            opt.zero_grad()
            out = net(z)
            loss = loss_fn(out, target)
            loss.backward()
            opt.step()
            trace.append(float(loss.detach()))
        with torch.no_grad():
            out = net(z)
            final_mse_m11 = float(loss_fn(out, target))
        fake = out[0].numpy().transpose(1, 2, 0).astype(np.float64)
        fake01 = np.clip((fake + 1.0) / 2.0, 0.0, 1.0)
    finally:
        torch.set_num_threads(old_threads)
    if trace and trace[-1] > trace[0]:
        raise DivergedFitError(
            f"twin fit diverged: loss {trace[0]:.4g} -> {trace[-1]:.4g}"
        )
    return GanFitResult(
        fake=fake01,
        loss_trace=trace,
        psnr_db=psnr(fake01, real),
        final_mse=final_mse_m11 / 4.0,
        steps_run=len(trace),
    )


# ---------------------------------------------------------------------------
# Pair manifests and the builder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwinPair:
    real_path: str
    fake_path: str
    class_name: str
    method: str  # "gan" | "dm"
    status: str  # "ok" | "below-gate" | "degenerate-predictor" | "error:<type>"
    psnr_db: float
    final_mse: float
    seed: int


_PAIR_COLUMNS = (
    "real_path",
    "fake_path",
    "class_name",
    "method",
    "status",
    "psnr_db",
    "final_mse",
    "seed",
)


def write_pairs_manifest(
    pairs: list[TwinPair], path: str | Path, extras: dict | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [PAIRS_SCHEMA_LINE]
    for key in sorted(extras or {}):
        lines.append(f"# {key}: {extras[key]}")
    lines.append("\t".join(_PAIR_COLUMNS))
    for p in pairs:
        lines.append(
            "\t".join(
                (
                    p.real_path,
                    p.fake_path,
                    p.class_name,
                    p.method,
                    p.status,
                    repr(float(p.psnr_db)),
                    repr(float(p.final_mse)),
                    str(p.seed),
                )
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_pairs_manifest(path: str | Path) -> list[TwinPair]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != PAIRS_SCHEMA_LINE:
        raise ManifestError(f"{path} is not a {PAIRS_SCHEMA_LINE!r} file")
    body = [l for l in lines[1:] if l.strip() and not l.startswith("#")]
    if not body or tuple(body[0].split("\t")) != _PAIR_COLUMNS:
        raise ManifestError(f"{path} is missing the pair column header")
    pairs = []
    for line in body[1:]:
        parts = line.split("\t")
        if len(parts) != len(_PAIR_COLUMNS):
            raise ManifestError(f"{path}: malformed pair row {line!r}")
        pairs.append(
            TwinPair(
                real_path=parts[0],
                fake_path=parts[1],
                class_name=parts[2],
                method=parts[3],
                status=parts[4],
                psnr_db=float(parts[5]),
                final_mse=float(parts[6]),
                seed=int(parts[7]),
            )
        )
    return pairs


def pairs_to_manifest(
    pairs: list[TwinPair], root: str | Path, include_flagged: bool = False
) -> Manifest:
    """Detection manifest over accepted pairs (real label 0, twin label 1)."""
    rows = []
    for p in pairs:
        if not include_flagged and p.status not in ("ok", "degenerate-predictor"):
            continue
        rows.append(
            ManifestRow(
                image_path=p.real_path,
                label=0,
                content_class=p.class_name,
                split="test",
            )
        )
        rows.append(
            ManifestRow(
                image_path=p.fake_path,
                label=1,
                generator_name=f"twinsynths-{p.method}",
                content_class=p.class_name,
                split="test",
            )
        )
    return Manifest(rows=rows, root=Path(root))


def build_twinsynths(
    manifest: Manifest,
    method: str,
    out_dir: str | Path,
    *,
    gan_config: GanFitConfig | None = None,
    schedule: DdimSchedule | None = None,
    predictor=None,
    psnr_gate: float | None = None,
    seed: int = 0,
    extras: dict | None = None,
) -> list[TwinPair]:
    """Build twins for every real row of a manifest.

    Twins and cropped source copies are written under <out_dir>/<method>/,
    and the pair manifest to <out_dir>/pairs-<method>.tsv. Per-pair failures
    become flagged rows instead of aborting the batch.
    """
    if method not in ("gan", "dm"):
        raise ManifestError(f"method must be gan or dm, got {method!r}")
    out = Path(out_dir)
    reals = [r for r in manifest.rows if r.label == 0]
    if method == "gan":
        base_cfg = gan_config or GanFitConfig()
        gate = base_cfg.psnr_gate if psnr_gate is None else psnr_gate
    else:
        if schedule is None:
            schedule = DdimSchedule(linear_alpha_schedule(50))
        if predictor is None:
            predictor = ZeroNoisePredictor()
        gate = psnr_gate

    pairs: list[TwinPair] = []
    for row in reals:
        pair_seed = derive_seed(seed, f"twin:{row.image_id}")
        stem = PurePosixPath(row.image_path).with_suffix("").as_posix()
        stem = stem.replace("/", "_")
        real_rel = PurePosixPath(method) / "real" / f"{stem}.png"
        fake_rel = PurePosixPath(method) / "fake" / f"{stem}.png"
        try:
            source = load_image(manifest.resolve(row))
            if method == "gan":
                cfg = replace(base_cfg, seed=pair_seed)
                side = min(source.shape[0], source.shape[1])
                if side < cfg.target_size:
                    raise ShapeMismatchError(
                        f"{row.image_path} is smaller than the "
                        f"{cfg.target_size}px twin target"
                    )
                real_u8 = center_crop(source, cfg.target_size)
                result = fit_gan_twin(real_u8, cfg)
                fake_u8 = to_uint8_image(result.fake)
                final_mse = result.final_mse
            else:
                real_u8 = source
                sched = replace(
                    schedule,
                    prompt=PROMPT_TEMPLATE.format(
                        class_name=row.content_class or "scene"
                    ),
                )
                x0 = as_float_image(real_u8) * 2.0 - 1.0
                decoded = ddim_reverse(
                    ddim_forward(x0, sched, predictor), sched, predictor
                )
                fake01 = np.clip((decoded + 1.0) / 2.0, 0.0, 1.0)
                fake_u8 = to_uint8_image(fake01)
                final_mse = float(
                    np.mean((fake01 - as_float_image(real_u8)) ** 2)
                )
            save_png(real_u8, out / real_rel)
            save_png(fake_u8, out / fake_rel)
            # File-level truth: measure what landed on disk.
            quality = psnr(
                as_float_image(load_image(out / real_rel)),
                as_float_image(load_image(out / fake_rel)),
            )
            if method == "dm" and isinstance(predictor, ZeroNoisePredictor):
                status = "degenerate-predictor"
            elif gate is not None and quality < gate:
                status = "below-gate"
            else:
                status = "ok"
            pairs.append(
                TwinPair(
                    real_path=str(real_rel),
                    fake_path=str(fake_rel),
                    class_name=row.content_class,
                    method=method,
                    status=status,
                    psnr_db=quality,
                    final_mse=final_mse,
                    seed=pair_seed,
                )
            )
        except Exception as exc:  # noqa: BLE001 - per-pair isolation
            pairs.append(
                TwinPair(
                    real_path=str(real_rel),
                    fake_path="",
                    class_name=row.content_class,
                    method=method,
                    status=f"error:{type(exc).__name__}",
                    psnr_db=float("nan"),
                    final_mse=float("nan"),
                    seed=pair_seed,
                )
            )
    meta = {"method": method, "decoder": decoder_version(), "seed": str(seed)}
    if gate is not None:
        meta["psnr_gate"] = f"{gate:g}"
    meta.update(extras or {})
    write_pairs_manifest(pairs, out / f"pairs-{method}.tsv", meta)
    return pairs
