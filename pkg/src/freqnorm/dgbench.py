"""Synthetic domain-generalization benchmark.

Datasets are procedurally drawn shape images (class = geometry) pushed
through per-domain style transforms that only touch what the frequency
view calls style: a radial amplitude filter (1/f-style coloration),
per-channel gains, a brightness offset, and additive noise. Phase (the
content) is untouched by construction, so the benchmark tests exactly
the premise the normalization operators are built on.

The experiment harness trains one model per (seed, held-out domain)
with Nesterov SGD, cosine-annealed learning rate, and early stopping,
selects the checkpoint by source-domain validation accuracy, and only
then looks at the held-out domain. Everything is deterministic given
(dataset seed, model seed, protocol).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import AbortedRunError, ConfigError, UnknownModuleError
from .kvfile import read_kv, write_kv
from .layers import SCNorm
from .models import Model, ModelSpec
from .spectral import amplitude_phase, forward_spectrum, inverse_spectrum
from .tensor import Tensor, from_array, read_tensor, write_tensor

DATASET_FORMAT = "freqnorm-dataset-v1"

RESULTS_HEADER = "run_id,variant,held_out,seed,epoch,train_loss,val_acc,test_acc"
LAMBDA_HEADER = "module,position,lambda_norm,lambda_org"


# -- dataset ------------------------------------------------------------------


@dataclass
class DomainStyle:
    """Per-domain style: amplitude coloration + intensity transform."""

    name: str
    filter_exponent: float = 0.0        # >0 suppresses high frequencies
    channel_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    brightness: float = 0.0
    noise: float = 0.0
    content_seed: int | None = None     # equal seeds -> identical content


@dataclass
class GeneratorConfig:
    seed: int = 0
    classes: int = 5
    images_per_class: int = 200
    image_size: int = 32
    domains: tuple[DomainStyle, ...] = ()

    def __post_init__(self):
        if not self.domains:
            self.domains = default_domain_styles()


def default_domain_styles() -> tuple[DomainStyle, ...]:
    return (
        DomainStyle("alpha", filter_exponent=0.0,
                    channel_gain=(1.0, 1.0, 1.0), brightness=0.0, noise=0.03),
        DomainStyle("beta", filter_exponent=1.1,
                    channel_gain=(1.45, 0.95, 0.65), brightness=0.14, noise=0.03),
        DomainStyle("gamma", filter_exponent=-0.6,
                    channel_gain=(0.6, 0.95, 1.45), brightness=-0.14, noise=0.03),
        DomainStyle("delta", filter_exponent=1.9,
                    channel_gain=(0.75, 1.4, 0.8), brightness=0.22, noise=0.08),
    )


@dataclass
class DomainData:
    name: str
    images: Tensor          # (n, 3, s, s) in [0, 1]
    labels: np.ndarray      # (n,) int class ids


@dataclass
class DomainDataset:
    config: GeneratorConfig
    domains: list[DomainData]

    def domain(self, name: str) -> DomainData:
        for d in self.domains:
            if d.name == name:
                return d
        raise ConfigError(f"no domain named {name!r}; have {[d.name for d in self.domains]}")

    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]


# Shape kinds available to the content generator, in class-id order.
_SHAPE_KINDS = ("disk", "square", "triangle", "cross", "ring", "diamond",
                "dots", "stripes")


def _shape_mask(kind: str, size: int, cx, cy, scale, theta) -> np.ndarray:
    """Anti-aliased masks for a batch of shape parameters.

    Parameter arrays have shape (n, 1, 1); output is (n, size, size).
    """
    ax = np.linspace(-1.0, 1.0, size)
    xx = ax[None, None, :]
    yy = ax[None, :, None]
    x = xx - cx
    y = yy - cy
    ct, st = np.cos(theta), np.sin(theta)
    xr = ct * x + st * y
    yr = -st * x + ct * y
    r = np.sqrt(x * x + y * y)

    if kind == "disk":
        sdf = r - scale
    elif kind == "square":
        sdf = np.maximum(np.abs(xr), np.abs(yr)) - 0.82 * scale
    elif kind == "triangle":
        k = np.sqrt(3.0)
        sdf = np.maximum(np.maximum(yr * 0.0 + (-yr) - 0.5 * scale,
                                    (k * xr + yr) / 2.0 - 0.5 * scale),
                         (-k * xr + yr) / 2.0 - 0.5 * scale)
    elif kind == "cross":
        bar1 = np.maximum(np.abs(xr) - scale, np.abs(yr) - 0.33 * scale)
        bar2 = np.maximum(np.abs(yr) - scale, np.abs(xr) - 0.33 * scale)
        sdf = np.minimum(bar1, bar2)
    elif kind == "ring":
        sdf = np.abs(r - 0.72 * scale) - 0.28 * scale
    elif kind == "diamond":
        sdf = np.abs(xr) + np.abs(yr) - 1.1 * scale
    elif kind == "dots":
        d1 = np.sqrt((xr - 0.5 * scale) ** 2 + yr ** 2)
        d2 = np.sqrt((xr + 0.5 * scale) ** 2 + yr ** 2)
        sdf = np.minimum(d1, d2) - 0.42 * scale
    elif kind == "stripes":
        period = 0.9 * scale
        sdf = np.abs(((yr + 4 * period) % period) - 0.5 * period) - 0.18 * period
        sdf = np.maximum(sdf, np.maximum(np.abs(xr), np.abs(yr)) - scale)
    else:
        raise ConfigError(f"unknown shape kind {kind!r}")

    softness = 1.5 / size
    return np.clip(0.5 - sdf / (2.0 * softness), 0.0, 1.0)


def _draw_content(rng: np.random.Generator, classes: int, per_class: int,
                  size: int) -> tuple[np.ndarray, np.ndarray]:
    """Grayscale content images (n, size, size) and labels, class-major."""
    images = np.empty((classes * per_class, size, size))
    labels = np.repeat(np.arange(classes), per_class)
    for k in range(classes):
        n = per_class
        cx = rng.uniform(-0.22, 0.22, (n, 1, 1))
        cy = rng.uniform(-0.22, 0.22, (n, 1, 1))
        scale = rng.uniform(0.34, 0.56, (n, 1, 1))
        if _SHAPE_KINDS[k] == "square":
            theta = rng.uniform(-0.3, 0.3, (n, 1, 1))
        else:
            theta = rng.uniform(0.0, 2 * np.pi, (n, 1, 1))
        fg = rng.uniform(0.65, 0.95, (n, 1, 1))
        bg = rng.uniform(0.08, 0.30, (n, 1, 1))
        mask = _shape_mask(_SHAPE_KINDS[k], size, cx, cy, scale, theta)
        images[k * per_class:(k + 1) * per_class] = bg + (fg - bg) * mask
    return images, labels


def radial_filter(h: int, w: int, exponent: float) -> np.ndarray:
    """Amplitude filter (1 + 8r)^(-exponent); r is the radial frequency.

    Strictly positive, DC gain exactly 1, so the filter reshapes
    amplitude while leaving phase untouched.
    """
    fy = np.minimum(np.arange(h), h - np.arange(h)) / h
    fx = np.minimum(np.arange(w), w - np.arange(w)) / w
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    return np.power(1.0 + 8.0 * r, -float(exponent))


def _apply_style(content: np.ndarray, style: DomainStyle,
                 noise_rng: np.random.Generator) -> np.ndarray:
    """(n, s, s) grayscale content -> (n, 3, s, s) styled images in [0, 1]."""
    n, h, w = content.shape
    spec = forward_spectrum(content)
    filt = radial_filter(h, w, style.filter_exponent)
    shaped = inverse_spectrum(spec * filt)
    out = np.empty((n, 3, h, w))
    for c in range(3):
        out[:, c] = shaped * style.channel_gain[c] + style.brightness
    if style.noise > 0.0:
        out += style.noise * noise_rng.standard_normal(out.shape)
    return np.clip(out, 0.0, 1.0)


def generate(config: GeneratorConfig) -> DomainDataset:
    """Deterministic dataset from the generator config."""
    if len(config.domains) < 3:
        raise ConfigError(f"need at least 3 domains, got {len(config.domains)}")
    if not 4 <= config.classes <= len(_SHAPE_KINDS):
        raise ConfigError(
            f"classes must be within 4..{len(_SHAPE_KINDS)}, got {config.classes}"
        )
    if config.images_per_class < 50:
        raise ConfigError(
            f"images_per_class must be >= 50, got {config.images_per_class}"
        )
    if config.image_size < 8:
        raise ConfigError(f"image_size must be >= 8, got {config.image_size}")
    names = [d.name for d in config.domains]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate domain names: {names}")

    domains = []
    for di, style in enumerate(config.domains):
        content_key = style.content_seed if style.content_seed is not None else di
        content_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([config.seed, 11, content_key])))
        content, labels = _draw_content(content_rng, config.classes,
                                        config.images_per_class, config.image_size)
        noise_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([config.seed, 23, di])))
        images = _apply_style(content, style, noise_rng)
        domains.append(DomainData(style.name, from_array(images), labels))
    return DomainDataset(config, domains)


def phase_correlation(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Amplitude-weighted cosine similarity of the two images' phases.

    1.0 means identical phase wherever there is energy; sign-flips and
    content differences pull it toward 0.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    amp_a, ph_a = amplitude_phase(forward_spectrum(a))
    amp_b, ph_b = amplitude_phase(forward_spectrum(b))
    weight = np.sqrt(amp_a * amp_b)
    total = weight.sum()
    if total == 0.0:
        return 1.0
    return float((weight * np.cos(ph_a - ph_b)).sum() / total)


# -- dataset io ----------------------------------------------------------------


def save_dataset(dataset: DomainDataset, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    cfg = dataset.config
    manifest: dict[str, str] = {
        "format": DATASET_FORMAT,
        "seed": str(cfg.seed),
        "classes": str(cfg.classes),
        "images_per_class": str(cfg.images_per_class),
        "image_size": str(cfg.image_size),
        "domains": ",".join(d.name for d in cfg.domains),
    }
    for style in cfg.domains:
        prefix = f"domain.{style.name}"
        manifest[f"{prefix}.filter_exponent"] = repr(style.filter_exponent)
        manifest[f"{prefix}.channel_gain"] = ",".join(repr(g) for g in style.channel_gain)
        manifest[f"{prefix}.brightness"] = repr(style.brightness)
        manifest[f"{prefix}.noise"] = repr(style.noise)
        if style.content_seed is not None:
            manifest[f"{prefix}.content_seed"] = str(style.content_seed)
    for dom in dataset.domains:
        write_tensor(os.path.join(path, f"{dom.name}.images.tnsr"), dom.images)
        write_tensor(os.path.join(path, f"{dom.name}.labels.tnsr"),
                     from_array(dom.labels.reshape(-1, 1, 1, 1).astype(np.float64)))
    write_kv(os.path.join(path, "manifest.txt"), manifest)


def load_dataset(path: str | os.PathLike) -> DomainDataset:
    path = os.fspath(path)
    manifest = read_kv(os.path.join(path, "manifest.txt"))
    if manifest.get("format") != DATASET_FORMAT:
        raise IOError(f"{path}: not a {DATASET_FORMAT} dataset")
    styles = []
    for name in manifest["domains"].split(","):
        prefix = f"domain.{name}"
        styles.append(DomainStyle(
            name=name,
            filter_exponent=float(manifest[f"{prefix}.filter_exponent"]),
            channel_gain=tuple(float(g) for g in manifest[f"{prefix}.channel_gain"].split(",")),
            brightness=float(manifest[f"{prefix}.brightness"]),
            noise=float(manifest[f"{prefix}.noise"]),
            content_seed=(int(manifest[f"{prefix}.content_seed"])
                          if f"{prefix}.content_seed" in manifest else None),
        ))
    cfg = GeneratorConfig(
        seed=int(manifest["seed"]),
        classes=int(manifest["classes"]),
        images_per_class=int(manifest["images_per_class"]),
        image_size=int(manifest["image_size"]),
        domains=tuple(styles),
    )
    domains = []
    for name in manifest["domains"].split(","):
        images = read_tensor(os.path.join(path, f"{name}.images.tnsr"))
        labels_t = read_tensor(os.path.join(path, f"{name}.labels.tnsr"))
        labels = labels_t.data.reshape(-1).astype(np.int64)
        domains.append(DomainData(name, images, labels))
    return DomainDataset(cfg, domains)


def config_from_kv(items: dict[str, str]) -> GeneratorConfig:
    """Generator config from key=value entries (see save_dataset keys)."""
    domains = []
    if "domains" in items:
        for name in items["domains"].split(","):
            prefix = f"domain.{name}"
            gain = items.get(f"{prefix}.channel_gain", "1,1,1")
            domains.append(DomainStyle(
                name=name,
                filter_exponent=float(items.get(f"{prefix}.filter_exponent", "0")),
                channel_gain=tuple(float(g) for g in gain.split(",")),
                brightness=float(items.get(f"{prefix}.brightness", "0")),
                noise=float(items.get(f"{prefix}.noise", "0")),
                content_seed=(int(items[f"{prefix}.content_seed"])
                              if f"{prefix}.content_seed" in items else None),
            ))
    return GeneratorConfig(
        seed=int(items.get("seed", "0")),
        classes=int(items.get("classes", "5")),
        images_per_class=int(items.get("images_per_class", "200")),
        image_size=int(items.get("image_size", "32")),
        domains=tuple(domains),
    )


# -- protocol / training --------------------------------------------------------


@dataclass
class Protocol:
    held_out: str
    val_fraction: float = 0.2
    seeds: tuple[int, ...] = (0,)
    epochs: int = 6
    iterations: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    cosine: bool = True
    early_stop_tolerance: int = 4

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.epochs < 1 or self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("epochs, iterations and batch_size must be >= 1")
        if self.early_stop_tolerance < 1:
            raise ConfigError("early_stop_tolerance must be >= 1")


@dataclass
class EpochMetric:
    epoch: int
    train_loss: float
    val_acc: float


@dataclass
class RunResult:
    run_id: str
    variant: str
    held_out: str
    seed: int
    epochs: list[EpochMetric]
    best_epoch: int
    val_acc: float
    test_acc: float
    lambdas: list[tuple[str, str, float, float]] = field(default_factory=list)


@dataclass
class ResultRecord:
    runs: list[RunResult]

    def mean_test_acc(self) -> float:
        return float(np.mean([r.test_acc for r in self.runs]))

    def mean_val_acc(self) -> float:
        return float(np.mean([r.val_acc for r in self.runs]))


class NesterovSGD:
    """SGD with (optionally Nesterov) momentum and coupled weight decay."""

    def __init__(self, params: list[tuple[str, ad.Node]], momentum: float = 0.9,
                 weight_decay: float = 0.0, nesterov: bool = True):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.velocity = {name: np.zeros_like(p.value) for name, p in params}

    def step(self, lr: float) -> None:
        mu = self.momentum
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.value
            v = mu * self.velocity[name] + g
            self.velocity[name] = v
            update = g + mu * v if self.nesterov else v
            p.value = p.value - lr * update


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * epoch / total_epochs))


def _split_sources(dataset: DomainDataset, held_out: str, val_fraction: float,
                   seed: int):
    """Pool source domains into train/val arrays (held-out never touched)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 41])))
    train_x, train_y, val_x, val_y = [], [], [], []
    for dom in dataset.domains:
        if dom.name == held_out:
            continue
        n = dom.images.shape[0]
        perm = rng.permutation(n)
        n_val = int(round(n * val_fraction))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        train_x.append(dom.images.data[train_idx])
        train_y.append(dom.labels[train_idx])
        val_x.append(dom.images.data[val_idx])
        val_y.append(dom.labels[val_idx])
    return (np.concatenate(train_x), np.concatenate(train_y),
            np.concatenate(val_x), np.concatenate(val_y))


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 128) -> float:
    hits = 0
    for start in range(0, images.shape[0], batch_size):
        logits = model.predict(images[start:start + batch_size])
        hits += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return hits / images.shape[0]


def train_model(dataset: DomainDataset, model_spec: ModelSpec, protocol: Protocol,
                seed: int) -> tuple[Model, list[EpochMetric], int, float]:
    """Train on the source domains; returns the best-validation model.

    The held-out domain is excluded here and never read; evaluation on
    it happens separately, after checkpoint selection.
    """
    if protocol.held_out not in dataset.domain_names():
        raise ConfigError(f"held-out domain {protocol.held_out!r} not in dataset "
                          f"{dataset.domain_names()}")
    train_x, train_y, val_x, val_y = _split_sources(
        dataset, protocol.held_out, protocol.val_fraction, seed)

    model = Model(model_spec, seed=seed)
    optimizer = NesterovSGD(model.parameters(), momentum=protocol.momentum,
                            weight_decay=protocol.weight_decay,
                            nesterov=protocol.nesterov)
    batch_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 57])))

    metrics: list[EpochMetric] = []
    best_state = model.get_state()
    best_val = -1.0
    best_epoch = 0
    stale = 0
    n_train = train_x.shape[0]

    for epoch in range(1, protocol.epochs + 1):
        lr = (cosine_lr(protocol.learning_rate, epoch - 1, protocol.epochs)
              if protocol.cosine else protocol.learning_rate)
        order = batch_rng.permutation(n_train)
        losses = []
        for it in range(protocol.iterations):
            lo = (it * protocol.batch_size) % n_train
            idx = order[lo:lo + protocol.batch_size]
            if idx.shape[0] < protocol.batch_size:
                idx = np.concatenate([idx, order[:protocol.batch_size - idx.shape[0]]])
            logits = model.forward(train_x[idx], train=True)
            loss = ad.cross_entropy_with_logits(logits, train_y[idx])
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise AbortedRunError(
                    f"training diverged at epoch {epoch} iteration {it}",
                    diagnostics={"epoch": epoch, "iteration": it, "loss": loss_val,
                                 "lr": lr},
                )
            model.zero_grad()
            ad.backward(loss)
            optimizer.step(lr)
            model.zero_grad()
            losses.append(loss_val)
        val_acc = accuracy(model, val_x, val_y)
        metrics.append(EpochMetric(epoch, float(np.mean(losses)), val_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_state = model.get_state()
            stale = 0
        else:
            stale += 1
            if stale >= protocol.early_stop_tolerance:
                break

    model.set_state(best_state)
    return model, metrics, best_epoch, best_val


def run_experiment(dataset: DomainDataset, model_spec: ModelSpec,
                   protocol: Protocol) -> ResultRecord:
    """Train/evaluate one configuration over the protocol's seeds."""
    runs = []
    held = dataset.domain(protocol.held_out)
    for seed in protocol.seeds:
        model, metrics, best_epoch, best_val = train_model(
            dataset, model_spec, protocol, seed)
        test_acc = accuracy(model, held.images.data, held.labels)
        run_id = f"{model_spec.variant}-{protocol.held_out}-s{seed}"
        runs.append(RunResult(
            run_id=run_id, variant=model_spec.variant, held_out=protocol.held_out,
            seed=seed, epochs=metrics, best_epoch=best_epoch,
            val_acc=best_val, test_acc=test_acc,
            lambdas=report_lambdas(model),
        ))
    return ResultRecord(runs)


def leave_one_out(dataset: DomainDataset, model_spec: ModelSpec,
                  protocol: Protocol) -> list[ResultRecord]:
    """One ResultRecord per held-out domain, same seeds/protocol."""
    records = []
    for name in dataset.domain_names():
        records.append(run_experiment(dataset, model_spec,
                                      replace(protocol, held_out=name)))
    return records


# -- lambda reporting -----------------------------------------------------------


def report_lambdas(model: Model) -> list[tuple[str, str, float, float]]:
    """(module, position, lambda_norm, lambda_org) for every adjust pair."""
    rows = []
    for module_id, position, layer in model.adjust_modules():
        lam_norm, lam_org = layer.pair()
        rows.append((module_id, position, lam_norm, lam_org))
    return rows


def fixed_lambda_ablation(model: Model, module_id: str, lam_org: float,
                          images: np.ndarray, labels: np.ndarray) -> dict:
    """Freeze one scnorm pair at (1 - lam_org, lam_org) and re-evaluate."""
    pos, layer = model._find_adjust(module_id)
    if not isinstance(layer, SCNorm):
        raise UnknownModuleError(f"{module_id} is not an scnorm module")
    model.freeze_lambda(module_id, lam_org)
    acc = accuracy(model, images, labels)
    return {"module": module_id, "position": pos, "lambda_org": float(lam_org),
            "frozen": True, "test_acc": acc}


# -- csv output -------------------------------------------------------------------


def write_results_csv(path: str | os.PathLike, records: list[ResultRecord]) -> None:
    lines = [RESULTS_HEADER]
    for record in records:
        for run in record.runs:
            for m in run.epochs:
                lines.append(f"{run.run_id},{run.variant},{run.held_out},{run.seed},"
                             f"{m.epoch},{_fmt(m.train_loss)},{_fmt(m.val_acc)},")
            lines.append(f"{run.run_id},{run.variant},{run.held_out},{run.seed},"
                         f"final,,{_fmt(run.val_acc)},{_fmt(run.test_acc)}")
    _write_lines(path, lines)


def write_lambda_csv(path: str | os.PathLike,
                     rows: list[tuple[str, str, float, float]]) -> None:
    lines = [LAMBDA_HEADER]
    for module, position, lam_norm, lam_org in rows:
        lines.append(f"{module},{position},{_fmt(lam_norm)},{_fmt(lam_org)}")
    _write_lines(path, lines)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_lines(path: str | os.PathLike, lines: list[str]) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
