"""Adversarial training loop for the autoencoder.

One step = one discriminator update (hinge loss over all scales)
followed by one generator update (adversarial + feature matching).
Two reconstruction metrics are tracked but never optimized:

    ar  L1 between input audio and its reconstruction
    nr  L1 between the latents of input and reconstruction
        (the reconstruction's latent takes 1.5 autoencoder passes)

Runs are deterministic: data batches are derived from (seed, step), so
training 100 steps equals training 50, checkpointing, and training 50
more, bit for bit.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .adversary import MultiScaleDiscriminator, discriminator_loss, generator_loss
from .audio import CANONICAL_RATE, Waveform, load_wav, resample
from .model import Autoencoder, ModelConfig


class DatasetError(Exception):
    """The training data directory is empty or unusable."""


class NonFiniteLossError(RuntimeError):
    """A training loss went NaN/inf; the step was aborted."""

    def __init__(self, which: str, step: int, value: float):
        super().__init__(f"non-finite {which} loss at step {step}: {value}")
        self.which = which
        self.step = step
        self.value = value


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 1000
    segment_len: int = 16384
    batch_size: int = 8
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    lr_decay_to: float = 1.0  # final lr as a fraction of initial, linear in step
    betas: tuple[float, float] = (0.5, 0.9)
    seed: int = 0
    checkpoint_every: int = 1000
    data_dir: str | None = None
    run_dir: str | None = None
    resume_from: str | None = None
    fresh_discriminator: bool = False
    disc_base_channels: int = 16
    disc_max_channels: int = 1024
    divergence_window: int = 200
    divergence_floor: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.segment_len % self.model.compression_ratio:
            raise ValueError(
                f"segment_len ({self.segment_len}) must be a multiple of the "
                f"compression ratio ({self.model.compression_ratio})"
            )


@dataclass
class TrainMetrics:
    step: int
    d_loss: float
    g_adv: float
    l_fm: float
    ar: float
    nr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def detect_divergence(
    history, window: int = 200, d_loss_floor: float = 1.0
) -> str:
    """Classify a metric trace as "healthy" or "diverging".

    Diverging means the discriminator has gained dominance: its windowed
    mean loss fell below `d_loss_floor` while both reconstruction
    metrics rose compared with the previous window.  A healthy
    discriminator loss hovers well above the floor.
    """
    history = list(history)
    if len(history) < window:
        raise ValueError(f"need at least {window} recorded steps, got {len(history)}")
    if len(history) < 2 * window:
        return "healthy"  # no previous window to compare against yet
    cur = history[-window:]
    prev = history[-2 * window : -window]

    def mean(ms, attr):
        return sum(getattr(m, attr) for m in ms) / len(ms)

    dominated = mean(cur, "d_loss") < d_loss_floor
    recon_rising = mean(cur, "ar") > mean(prev, "ar") and mean(cur, "nr") > mean(prev, "nr")
    return "diverging" if dominated and recon_rising else "healthy"


class SegmentSampler:
    """Uniform (file, offset) segment sampler with per-step determinism.

    Batch contents depend only on (seed, step), never on draw history,
    which is what makes checkpoint resume reproduce a straight run.
    Files shorter than the segment length are zero-padded at the tail.
    """

    def __init__(self, waveforms: list[Waveform], segment_len: int, batch_size: int, seed: int = 0):
        if not waveforms:
            raise DatasetError("no usable audio to sample from")
        self.segment_len = int(segment_len)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.files = [np.asarray(w.samples, dtype=np.float64) for w in waveforms]

    @classmethod
    def from_dir(
        cls,
        data_dir,
        segment_len: int,
        batch_size: int,
        seed: int = 0,
        sample_rate: int = CANONICAL_RATE,
    ) -> "SegmentSampler":
        data_dir = Path(data_dir)
        paths = sorted(data_dir.glob("*.wav")) + sorted(data_dir.glob("*.WAV"))
        if not paths:
            raise DatasetError(f"no WAV files in {data_dir}")
        waves = []
        errors = []
        for p in paths:
            try:
                w = load_wav(p)
            except Exception as exc:
                errors.append(f"{p.name}: {exc}")
                continue
            if w.sample_rate != sample_rate:
                w = resample(w, sample_rate)
            waves.append(w)
        if not waves:
            raise DatasetError(f"no readable WAV files in {data_dir}: {'; '.join(errors[:3])}")
        return cls(waves, segment_len, batch_size, seed)

    def batch(self, step: int) -> np.ndarray:
        """(batch_size, segment_len) array for a given global step."""
        rng = np.random.default_rng([self.seed, int(step)])
        out = np.zeros((self.batch_size, self.segment_len))
        for b in range(self.batch_size):
            x = self.files[rng.integers(len(self.files))]
            if x.size <= self.segment_len:
                out[b, : x.size] = x
            else:
                offset = rng.integers(x.size - self.segment_len + 1)
                out[b] = x[offset : offset + self.segment_len]
        return out


def ingest_dataset(data_dir, segment_len: int, batch_size: int, seed: int = 0) -> SegmentSampler:
    """Build a segment sampler over a directory of WAV files."""
    return SegmentSampler.from_dir(data_dir, segment_len, batch_size, seed)


class Trainer:
    """Owns the networks, optimizers and run bookkeeping."""

    def __init__(self, cfg: TrainConfig, sampler: SegmentSampler | None = None):
        self.cfg = cfg
        self.global_step = 0
        self.diverging = False
        self._divergence_reported = False
        self.history: deque[TrainMetrics] = deque(maxlen=2 * cfg.divergence_window)
        self.last_checkpoint: Path | None = None

        resumed = ckpt_io.load_checkpoint(cfg.resume_from) if cfg.resume_from else None
        if resumed is not None:
            cfg.model = resumed.config
            disc_cfg = resumed.extra.get("disc_config", {})
            cfg.disc_base_channels = disc_cfg.get("base_channels", cfg.disc_base_channels)
            cfg.disc_max_channels = disc_cfg.get("max_channels", cfg.disc_max_channels)

        torch.manual_seed(cfg.seed)
        self.autoencoder = Autoencoder(cfg.model)
        self.discriminator = MultiScaleDiscriminator(
            base_channels=cfg.disc_base_channels,
            max_channels=cfg.disc_max_channels,
            leaky_slope=cfg.model.leaky_slope,
        )
        self.opt_g = torch.optim.Adam(
            self.autoencoder.parameters(), lr=cfg.lr_generator, betas=cfg.betas
        )
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=cfg.lr_discriminator, betas=cfg.betas
        )

        if resumed is not None:
            self._restore(resumed)

        if sampler is None and cfg.data_dir is not None:
            sampler = SegmentSampler.from_dir(
                cfg.data_dir,
                cfg.segment_len,
                cfg.batch_size,
                seed=cfg.seed,
                sample_rate=cfg.model.sample_rate,
            )
        self.sampler = sampler

        self.run_dir = Path(cfg.run_dir) if cfg.run_dir else None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    # -- persistence ---------------------------------------------------

    def _restore(self, resumed: ckpt_io.Checkpoint) -> None:
        ckpt_io.load_module_arrays(self.autoencoder, resumed.arrays, ckpt_io.AE_PREFIX)
        has_disc = any(k.startswith(ckpt_io.DISC_PREFIX) for k in resumed.arrays)
        if has_disc and not self.cfg.fresh_discriminator:
            ckpt_io.load_module_arrays(self.discriminator, resumed.arrays, ckpt_io.DISC_PREFIX)
            _restore_adam(
                self.opt_d,
                self.discriminator,
                resumed.arrays,
                ckpt_io.OPTIM_PREFIX + "disc.",
                resumed.extra.get("adam_step_disc"),
            )
        _restore_adam(
            self.opt_g,
            self.autoencoder,
            resumed.arrays,
            ckpt_io.OPTIM_PREFIX + "ae.",
            resumed.extra.get("adam_step_ae"),
        )
        self.global_step = resumed.step

    def make_checkpoint(self) -> ckpt_io.Checkpoint:
        arrays = {}
        arrays.update(ckpt_io.module_arrays(self.autoencoder, ckpt_io.AE_PREFIX))
        arrays.update(ckpt_io.module_arrays(self.discriminator, ckpt_io.DISC_PREFIX))
        opt_g_arrays, step_g = _adam_arrays(self.opt_g, self.autoencoder, ckpt_io.OPTIM_PREFIX + "ae.")
        opt_d_arrays, step_d = _adam_arrays(
            self.opt_d, self.discriminator, ckpt_io.OPTIM_PREFIX + "disc."
        )
        arrays.update(opt_g_arrays)
        arrays.update(opt_d_arrays)
        extra = {
            "adam_step_ae": step_g,
            "adam_step_disc": step_d,
            "disc_config": {
                "base_channels": self.cfg.disc_base_channels,
                "max_channels": self.cfg.disc_max_channels,
            },
            "diverging": self.diverging,
        }
        return ckpt_io.Checkpoint(
            config=self.cfg.model, arrays=arrays, step=self.global_step, extra=extra
        )

    def save(self, path) -> Path:
        path = Path(path)
        ckpt_io.save_checkpoint(self.make_checkpoint(), path)
        self.last_checkpoint = path
        return path

    # -- optimization ---------------------------------------------------

    def _apply_lr_schedule(self, step: int) -> None:
        if self.cfg.lr_decay_to >= 1.0:
            return
        frac = min(max(step - 1, 0) / max(self.cfg.steps - 1, 1), 1.0)
        scale = 1.0 + (self.cfg.lr_decay_to - 1.0) * frac
        for opt, base in ((self.opt_g, self.cfg.lr_generator), (self.opt_d, self.cfg.lr_discriminator)):
            for group in opt.param_groups:
                group["lr"] = base * scale

    def train_step(self, batch: np.ndarray, step: int) -> TrainMetrics:
        x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).unsqueeze(1)
        self._apply_lr_schedule(step)

        disc_params = {k: v.clone() for k, v in self.discriminator.state_dict().items()}
        disc_opt_state = _clone_adam_state(self.opt_d)

        # discriminator update
        with torch.no_grad():
            fake_for_d = self.autoencoder(x)
        d_loss = discriminator_loss(self.discriminator(x), self.discriminator(fake_for_d))
        if not torch.isfinite(d_loss):
            raise NonFiniteLossError("discriminator", step, float(d_loss.detach()))
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        # generator update against the freshly updated discriminator
        fake = self.autoencoder(x)
        fake_out = self.discriminator(fake)
        with torch.no_grad():
            real_ref = self.discriminator(x)
        g_total, g_adv, l_fm = generator_loss(real_ref, fake_out)
        if not torch.isfinite(g_total):
            self.discriminator.load_state_dict(disc_params)
            _load_adam_state(self.opt_d, disc_opt_state)
            raise NonFiniteLossError("generator", step, float(g_total.detach()))

        ar, nr = self.reconstruction_metrics(x, fake.detach())

        self.opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        self.opt_g.step()

        return TrainMetrics(
            step=step,
            d_loss=float(d_loss.detach()),
            g_adv=float(g_adv.detach()),
            l_fm=float(l_fm.detach()),
            ar=ar,
            nr=nr,
        )

    @torch.no_grad()
    def reconstruction_metrics(self, x: torch.Tensor, fake: torch.Tensor) -> tuple[float, float]:
        """Monitoring metrics; gradients never flow through these.

        The latent comparison re-encodes the reconstruction, so that side
        has taken one and a half passes through the autoencoder.
        """
        ar = (x - fake).abs().mean()
        nr = (self.autoencoder.encoder(x) - self.autoencoder.encoder(fake)).abs().mean()
        return float(ar), float(nr)

    def run(self, on_step=None, warn=None) -> list[TrainMetrics]:
        """Train from the current step up to cfg.steps.

        `on_step` is called with each TrainMetrics; `warn` with any
        divergence message.  Returns the metric trace of this call.
        """
        if self.sampler is None:
            raise DatasetError("no data: provide a sampler or cfg.data_dir")
        trace = []
        metrics_file = None
        if self.run_dir is not None:
            metrics_file = open(self.run_dir / "metrics.jsonl", "a")
        try:
            for step in range(self.global_step + 1, self.cfg.steps + 1):
                metrics = self.train_step(self.sampler.batch(step), step)
                self.global_step = step
                self.history.append(metrics)
                trace.append(metrics)
                if metrics_file is not None:
                    metrics_file.write(metrics.to_json() + "\n")
                self._check_divergence(warn)
                if on_step is not None:
                    on_step(metrics)
                if self.run_dir is not None and step % self.cfg.checkpoint_every == 0:
                    self.save(self.run_dir / f"step_{step}.tsmn")
        finally:
            if metrics_file is not None:
                metrics_file.close()
        if trace and self.run_dir is not None and self.global_step % self.cfg.checkpoint_every:
            self.save(self.run_dir / f"step_{self.global_step}.tsmn")
        return trace

    def _check_divergence(self, warn) -> None:
        if len(self.history) < 2 * self.cfg.divergence_window:
            return
        verdict = detect_divergence(
            self.history, self.cfg.divergence_window, self.cfg.divergence_floor
        )
        if verdict == "diverging":
            self.diverging = True
            if not self._divergence_reported:
                self._divergence_reported = True
                if warn is not None:
                    warn(
                        f"step {self.global_step}: discriminator dominating "
                        f"(windowed d_loss < {self.cfg.divergence_floor}) while "
                        "reconstruction metrics rise; training may be diverging"
                    )


# -- Adam state (de)serialization by parameter name ---------------------


def _named_params(module: torch.nn.Module):
    return list(module.named_parameters())


def _adam_arrays(opt: torch.optim.Adam, module: torch.nn.Module, prefix: str):
    arrays = {}
    step_val = None
    for name, p in _named_params(module):
        state = opt.state.get(p)
        if not state:
            continue
        arrays[f"{prefix}{name}.m1"] = state["exp_avg"].numpy().astype(np.float32, copy=True)
        arrays[f"{prefix}{name}.m2"] = state["exp_avg_sq"].numpy().astype(np.float32, copy=True)
        step_val = float(state["step"])
    return arrays, step_val


def _restore_adam(opt, module, arrays: dict, prefix: str, step_val) -> None:
    if step_val is None:
        return
    for name, p in _named_params(module):
        k1, k2 = f"{prefix}{name}.m1", f"{prefix}{name}.m2"
        if k1 not in arrays or k2 not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step_val)),
            "exp_avg": torch.from_numpy(arrays[k1].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[k2].copy()),
        }


def _clone_adam_state(opt) -> dict:
    return {
        p: {k: (v.clone() if torch.is_tensor(v) else v) for k, v in st.items()}
        for p, st in opt.state.items()
    }


def _load_adam_state(opt, snapshot: dict) -> None:
    opt.state.clear()
    for p, st in snapshot.items():
        opt.state[p] = st
