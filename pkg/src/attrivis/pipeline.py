"""End-to-end orchestration: config parsing and the pipeline stages.

Stages communicate only through files under the output directory, so each
one can run in its own process and any of them can be re-run in isolation:

    <out>/preprocessed.bin              cropped/resized tensors, uncentered
    <out>/<attr>/labels.csv             image_id, label (-1 = excluded), mean
    <out>/<attr>/folds.csv              image_id, fold
    <out>/<attr>/fold<k>.net|.svm       per-fold models (centering inside .net)
    <out>/<attr>/predictions.csv        out-of-fold outputs, one row per image
    <out>/<attr>/results.csv            per-fold metrics + pooled summary row
    <out>/<attr>/significance.csv       chance/human significance table
    <out>/<attr>/features/*.png + channel_energy.csv

Every random choice derives from the single master seed through named
substreams, so repeated runs are byte-identical.
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from attrivis import deconv, nn, stats, svm, synth
from attrivis.data import (
    Centering,
    DatasetManifest,
    apply_centering,
    attribute_is_binary,
    balance_binary,
    binarize,
    center_crop,
    bilinear_resize,
    compute_centering,
    kfold_split,
    load_cache,
    load_manifest,
    save_cache,
)
from attrivis.errors import (
    ConfigError,
    EmptyClass,
    InvalidSplit,
    MissingArtifact,
)
from attrivis.metrics import PredictionSet, accuracy, correlation, human_loo
from attrivis.errors import UndefinedCorrelation
from attrivis.seeding import derive_seed

_FMT = "%.10g"  # one float formatting rule for every CSV this module writes


def _fmt(v) -> str:
    return _FMT % v


# ---------------------------------------------------------------------------
# configuration

_INT_KEYS = {"seed", "k", "batch_size", "epochs", "kernel_size", "fc_units",
             "svm_epochs", "synth_n", "synth_raters"}
_FLOAT_KEYS = {"learning_rate", "momentum", "weight_decay", "svm_lambda",
               "synth_noise"}
_STR_KEYS = {"manifest", "out", "attributes", "relu_rule", "centering",
             "conv_channels"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


@dataclass
class RunConfig:
    out: str = ""
    manifest: str = ""
    attributes: Tuple[str, ...] = ()
    seed: int = 0
    k: int = 11
    # lr and svm_lambda are calibrated to the raw 0-255 pixel scale the
    # preprocessing keeps; see README if you rescale inputs
    learning_rate: float = 2e-4
    momentum: float = 0.9
    batch_size: int = 60
    weight_decay: float = 0.001
    epochs: int = 6
    conv_channels: Tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 5
    fc_units: int = 256
    relu_rule: str = "deconvnet"
    centering: str = "per_channel"
    svm_lambda: float = 10.0
    svm_epochs: int = 20
    synth_n: int = 0
    synth_raters: int = 5
    synth_noise: float = 0.1

    def __post_init__(self):
        if self.relu_rule not in deconv.RELU_RULES:
            raise ConfigError(f"relu_rule must be one of {deconv.RELU_RULES}")
        if self.centering not in ("per_channel", "scalar"):
            raise ConfigError("centering must be per_channel or scalar")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if not self.conv_channels:
            raise ConfigError("conv_channels must name at least one layer")

    def train_config(self, seed: int) -> nn.TrainConfig:
        return nn.TrainConfig(learning_rate=self.learning_rate,
                              momentum=self.momentum,
                              batch_size=self.batch_size,
                              weight_decay=self.weight_decay,
                              epochs=self.epochs, seed=seed)

    def build_net(self) -> nn.Network:
        return nn.build_network(conv_channels=self.conv_channels,
                                kernel_size=self.kernel_size,
                                fc_units=self.fc_units)


def parse_config(path) -> RunConfig:
    """Read a key=value file; unknown keys are an error, not a warning."""
    values: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}, line {line_no}: expected key=value")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _ALL_KEYS:
                raise ConfigError(f"{path}, line {line_no}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}, line {line_no}: duplicate key {key!r}")
            values[key] = val.strip()
    return config_from_values(values, source=str(path))


def config_from_values(values: Dict[str, str], source: str = "<config>") -> RunConfig:
    kwargs = {}
    for key, val in values.items():
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(val)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(val)
            elif key == "attributes":
                kwargs[key] = tuple(a.strip() for a in val.split(",") if a.strip())
            elif key == "conv_channels":
                kwargs[key] = tuple(int(c) for c in val.split(",") if c.strip())
            else:
                kwargs[key] = val
        except ValueError:
            raise ConfigError(f"{source}: bad value {val!r} for key {key!r}") from None
    return RunConfig(**kwargs)


def with_overrides(cfg: RunConfig, out=None, attributes=None,
                   seed=None) -> RunConfig:
    changes = {}
    if out:
        changes["out"] = str(out)
    if attributes:
        changes["attributes"] = tuple(attributes)
    if seed is not None:
        changes["seed"] = seed
    return replace(cfg, **changes) if changes else cfg


# ---------------------------------------------------------------------------
# artifact layout

class Artifacts:
    def __init__(self, cfg: RunConfig):
        if not cfg.out:
            raise ConfigError("an output directory is required (out=... or --out)")
        self.root = Path(cfg.out)

    def cache(self) -> Path:
        return self.root / "preprocessed.bin"

    def attr_dir(self, attr: str) -> Path:
        return self.root / attr

    def labels(self, attr: str) -> Path:
        return self.attr_dir(attr) / "labels.csv"

    def folds(self, attr: str) -> Path:
        return self.attr_dir(attr) / "folds.csv"

    def net(self, attr: str, fold: int) -> Path:
        return self.attr_dir(attr) / f"fold{fold}.net"

    def svm(self, attr: str, fold: int) -> Path:
        return self.attr_dir(attr) / f"fold{fold}.svm"

    def predictions(self, attr: str) -> Path:
        return self.attr_dir(attr) / "predictions.csv"

    def results(self, attr: str) -> Path:
        return self.attr_dir(attr) / "results.csv"

    def significance(self, attr: str) -> Path:
        return self.attr_dir(attr) / "significance.csv"

    def features_dir(self, attr: str) -> Path:
        return self.attr_dir(attr) / "features"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(
            f"{path} not found; run the {producer} command first")
    return path


# ---------------------------------------------------------------------------
# shared loading helpers

def _manifest_path(cfg: RunConfig) -> Path:
    if cfg.manifest:
        return _require(Path(cfg.manifest), "synth")
    generated = Artifacts(cfg).root / "dataset" / "manifest.csv"
    if generated.is_file():
        return generated
    raise ConfigError(
        "no manifest configured (set manifest=... or run the synth command "
        "so <out>/dataset/manifest.csv exists)")


def _load_dataset(cfg: RunConfig) -> DatasetManifest:
    return load_manifest(_manifest_path(cfg))


def _select_attributes(cfg: RunConfig, manifest: DatasetManifest) -> List[str]:
    if not cfg.attributes:
        return list(manifest.attributes)
    for a in cfg.attributes:
        if a not in manifest.attributes:
            raise ConfigError(
                f"attribute {a!r} not present in the manifest "
                f"(has: {', '.join(manifest.attributes)})")
    return list(cfg.attributes)


def build_labels(manifest: DatasetManifest, attribute: str, master_seed: int):
    """Per-image labels for one attribute.

    Continuous ratings are median-split (the split's dropped median, if
    any, gets label -1); pre-binarized ratings are consensus-thresholded
    and the larger class is down-sampled (removed images get label -1).
    Returns (labels dict id -> {-1,0,1}, means dict id -> mean rating).
    """
    ids = manifest.ids()
    means = manifest.ratings_matrix(attribute).mean(axis=1)
    if attribute_is_binary(manifest, attribute):
        y = (means >= 0.5).astype(np.int64)
        kept = set(balance_binary(ids, y, derive_seed(master_seed, attribute)))
        labels = {i: (int(v) if i in kept else -1) for i, v in zip(ids, y)}
    else:
        lab = binarize(means, derive_seed(master_seed, attribute))
        labels = {i: int(v) for i, v in zip(ids, lab)}
    return labels, dict(zip(ids, (float(v) for v in means)))


def _kept_ids(labels: Dict[str, int]) -> List[str]:
    return [i for i, v in labels.items() if v >= 0]


# ---------------------------------------------------------------------------
# stages

def run_synth(cfg: RunConfig) -> Path:
    """Generate the curated synthetic dataset under <out>/dataset.

    Three attributes: a linear intensity signal in a "mouth" band, an
    XOR-style two-patch signal at "eye" height, and a zero-strength
    control that carries ratings but no image signal.
    """
    if cfg.synth_n < 1:
        raise ConfigError("synth needs synth_n >= 1")
    art = Artifacts(cfg)
    spec = default_synth_spec(cfg.synth_n, cfg.synth_raters, cfg.synth_noise,
                              cfg.seed)
    out = art.root / "dataset"
    synth.generate(spec, out)
    return out / "manifest.csv"


def default_synth_spec(n: int, raters: int, noise: float,
                       seed: int) -> synth.SynthSpec:
    return synth.SynthSpec(
        n_images=n,
        attributes=(
            synth.AttributeSpec("marked", synth.Region(38, 50, 15, 45)),
            synth.AttributeSpec("paired", synth.Region(24, 34, 14, 46),
                                nonlinear=True),
            synth.AttributeSpec("plain", synth.Region(6, 14, 20, 40),
                                signal_strength=0.0),
        ),
        n_raters=raters,
        rater_noise_sd=noise,
        seed=derive_seed(seed, "synth"),
    )


def run_preprocess(cfg: RunConfig) -> Path:
    """Crop/resize every manifest image into the tensor cache.

    Centering is deliberately absent here: it depends on the training fold
    and is applied at train/evaluate time from the checkpoint.
    """
    manifest = _load_dataset(cfg)
    art = Artifacts(cfg)
    art.root.mkdir(parents=True, exist_ok=True)
    images = np.stack([
        bilinear_resize(center_crop(ex.image), 60, 60) for ex in manifest.examples
    ])
    save_cache(art.cache(), manifest.ids(), images)
    return art.cache()


def _load_cache_for(cfg: RunConfig, art: Artifacts):
    ids, images = load_cache(_require(art.cache(), "preprocess"))
    return ids, {i: k for k, i in enumerate(ids)}, images


def run_train(cfg: RunConfig) -> None:
    """Per attribute: build labels, split folds, train one CNN and one SVM
    per fold on the training folds only."""
    manifest = load_manifest(_load_dataset_path(cfg), load_images=False)
    art = Artifacts(cfg)
    ids, index_of, images = _load_cache_for(cfg, art)
    if ids != manifest.ids():
        raise MissingArtifact(
            f"{art.cache()} does not match the manifest; "
            f"run the preprocess command again")

    for attr in _select_attributes(cfg, manifest):
        adir = art.attr_dir(attr)
        adir.mkdir(parents=True, exist_ok=True)
        labels, means = build_labels(manifest, attr, cfg.seed)
        kept = _kept_ids(labels)
        _write_csv(art.labels(attr), ["image_id", "label", "mean_rating"],
                   [(i, labels[i], _fmt(means[i])) for i in manifest.ids()])
        try:
            fa = kfold_split(len(kept), cfg.k, derive_seed(cfg.seed, attr, "folds"),
                             ids=kept)
        except InvalidSplit:
            raise InvalidSplit(
                f"attribute {attr!r} retains {len(kept)} images, fewer than "
                f"k={cfg.k} folds")
        _write_csv(art.folds(attr), ["image_id", "fold"],
                   [(i, fa.fold_of[i]) for i in kept])

        y = np.array([labels[i] for i in kept], dtype=np.int64)
        rows = np.array([index_of[i] for i in kept])
        for f in range(cfg.k):
            in_fold = np.array([fa.fold_of[i] == f for i in kept])
            Xraw = images[rows[~in_fold]]
            ytr = y[~in_fold]
            centering = compute_centering(Xraw, cfg.centering)
            Xtr = apply_centering(Xraw, centering)
            net = cfg.build_net().init_params(derive_seed(cfg.seed, attr, f, "init"))
            nn.train(net, Xtr, ytr,
                     cfg.train_config(derive_seed(cfg.seed, attr, f, "train")))
            nn.save_network(net, art.net(attr, f), centering=centering.to_dict())
            model = svm.svm_train(Xtr, 2.0 * ytr - 1.0, lam=cfg.svm_lambda,
                                  epochs=cfg.svm_epochs,
                                  seed=derive_seed(cfg.seed, attr, f, "svm"))
            svm.save_svm(model, art.svm(attr, f))


def _load_dataset_path(cfg: RunConfig) -> Path:
    return _manifest_path(cfg)


def _corr_or_nan(ps: PredictionSet) -> float:
    """Per-fold correlation; a fold with constant predictions (a net that
    collapsed, or an unlucky tiny fold) reports nan instead of aborting."""
    try:
        return correlation(ps)
    except UndefinedCorrelation:
        return float("nan")


def _read_labels(art: Artifacts, attr: str):
    labels, means = {}, {}
    with open(_require(art.labels(attr), "train"), newline="") as f:
        for row in csv.DictReader(f):
            labels[row["image_id"]] = int(row["label"])
            means[row["image_id"]] = float(row["mean_rating"])
    return labels, means


def _read_folds(art: Artifacts, attr: str) -> Dict[str, int]:
    fold_of = {}
    with open(_require(art.folds(attr), "train"), newline="") as f:
        for row in csv.DictReader(f):
            fold_of[row["image_id"]] = int(row["fold"])
    return fold_of


def run_evaluate(cfg: RunConfig) -> None:
    """Assemble out-of-fold predictions and write per-fold + pooled metrics."""
    manifest = load_manifest(_load_dataset_path(cfg), load_images=False)
    art = Artifacts(cfg)
    ids, index_of, images = _load_cache_for(cfg, art)

    for attr in _select_attributes(cfg, manifest):
        labels, means = _read_labels(art, attr)
        fold_of = _read_folds(art, attr)
        kept = [i for i in ids if labels.get(i, -1) >= 0]
        missing = [i for i in kept if i not in fold_of]
        if missing:
            raise InvalidSplit(
                f"fold assignment for {attr!r} misses {len(missing)} images "
                f"(first: {missing[0]})")

        loo_acc = human_loo(manifest, attr, "accuracy",
                            seed=derive_seed(cfg.seed, attr, "loo"))
        loo_corr = human_loo(manifest, attr, "correlation",
                             seed=derive_seed(cfg.seed, attr, "loo"))

        pred_rows = []
        result_rows = []
        pooled: Dict[str, Tuple[float, float]] = {}
        for f in range(cfg.k):
            net, cent_dict = nn.load_network(_require(art.net(attr, f), "train"))
            model = svm.load_svm(_require(art.svm(attr, f), "train"))
            centering = Centering.from_dict(cent_dict)
            test_ids = [i for i in kept if fold_of[i] == f]
            if not test_ids:
                raise InvalidSplit(f"fold {f} of {attr!r} has no test images")
            X = apply_centering(images[[index_of[i] for i in test_ids]], centering)
            probs = net.forward_batch(X)[0][:, 1]
            margins = svm.svm_decision(model, X)
            for i, p, m in zip(test_ids, probs, margins):
                pooled[i] = (float(p), float(m))
                pred_rows.append((i, f, _fmt(p), _fmt(m), labels[i]))
            ps = PredictionSet(
                test_ids, probs, np.array([labels[i] for i in test_ids]),
                np.array([means[i] for i in test_ids]))
            svm_ps = PredictionSet(
                test_ids, (margins >= 0).astype(np.float64),
                np.array([labels[i] for i in test_ids]))
            result_rows.append((attr, f, _fmt(accuracy(ps)), _fmt(accuracy(svm_ps)),
                                _fmt(_corr_or_nan(ps)), _fmt(loo_acc.mean),
                                _fmt(loo_corr.mean)))

        kept_sorted = [i for i in ids if i in pooled]
        ps_all = PredictionSet(
            kept_sorted, np.array([pooled[i][0] for i in kept_sorted]),
            np.array([labels[i] for i in kept_sorted]),
            np.array([means[i] for i in kept_sorted]))
        svm_all = PredictionSet(
            kept_sorted,
            np.array([1.0 if pooled[i][1] >= 0 else 0.0 for i in kept_sorted]),
            np.array([labels[i] for i in kept_sorted]))
        result_rows.append((attr, "all", _fmt(accuracy(ps_all)),
                            _fmt(accuracy(svm_all)), _fmt(_corr_or_nan(ps_all)),
                            _fmt(loo_acc.mean), _fmt(loo_corr.mean)))

        pred_rows.sort(key=lambda r: r[0])
        _write_csv(art.predictions(attr),
                   ["image_id", "fold", "p_positive", "margin_svm", "label"],
                   pred_rows)
        _write_csv(art.results(attr),
                   ["attribute", "fold", "acc_cnn", "acc_svm", "corr_cnn",
                    "acc_human_mean", "corr_human_mean"],
                   result_rows)


def _read_predictions(art: Artifacts, attr: str):
    rows = []
    with open(_require(art.predictions(attr), "evaluate"), newline="") as f:
        for row in csv.DictReader(f):
            rows.append((row["image_id"], float(row["p_positive"]),
                         float(row["margin_svm"]), int(row["label"])))
    return rows


def run_stats(cfg: RunConfig) -> None:
    """Significance of the pooled out-of-fold metrics against the chance
    nulls and against the bootstrapped human baseline."""
    manifest = load_manifest(_load_dataset_path(cfg), load_images=False)
    art = Artifacts(cfg)
    for attr in _select_attributes(cfg, manifest):
        labels, means = _read_labels(art, attr)
        preds = _read_predictions(art, attr)
        p = np.array([r[1] for r in preds])
        y = np.array([r[3] for r in preds])
        mean_r = np.array([means[r[0]] for r in preds])
        ps = PredictionSet([r[0] for r in preds], p, y, mean_r)
        acc_obs = accuracy(ps)
        corr_obs = correlation(ps)

        bern = stats.bernoulli_accuracy_null(len(preds))
        p_acc, sig_acc = stats.one_sided_test(acc_obs, bern)
        unull = stats.uniform_correlation_null(
            mean_r, seed=derive_seed(cfg.seed, attr, "unull"))
        p_corr, sig_corr = stats.one_sided_test(corr_obs, unull)

        loo_acc = human_loo(manifest, attr, "accuracy",
                            seed=derive_seed(cfg.seed, attr, "loo"))
        loo_corr = human_loo(manifest, attr, "correlation",
                             seed=derive_seed(cfg.seed, attr, "loo"))
        boot_acc = stats.bootstrap_human(
            loo_acc.per_rater, seed=derive_seed(cfg.seed, attr, "boot", "acc"))
        boot_corr = stats.bootstrap_human(
            loo_corr.per_rater, seed=derive_seed(cfg.seed, attr, "boot", "corr"))
        _, sig_h_acc = stats.one_sided_test(acc_obs, boot_acc)
        _, sig_h_corr = stats.one_sided_test(corr_obs, boot_corr)

        _write_csv(art.significance(attr),
                   ["attribute", "metric", "observed", "critical_95", "p_value",
                    "significant_vs_chance", "significant_vs_human"],
                   [(attr, "accuracy", _fmt(acc_obs),
                     _fmt(bern.critical_value_95), _fmt(p_acc),
                     int(sig_acc), int(sig_h_acc)),
                    (attr, "correlation", _fmt(corr_obs),
                     _fmt(unull.critical_value_95), _fmt(p_corr),
                     int(sig_corr), int(sig_h_corr))])


def run_visualize(cfg: RunConfig, mode: str = "all") -> None:
    """Mean deconv projections per class and mask mode, plus channel energy.

    Each image is projected through the network of the fold that held it
    out, so the aggregate covers every image exactly once.
    """
    if mode == "all":
        modes = [deconv.MaskMode.FULL, deconv.MaskMode.POSITIVE_ONLY,
                 deconv.MaskMode.NEGATIVE_ONLY]
    else:
        modes = [deconv.MaskMode.parse(mode)]
    manifest = load_manifest(_load_dataset_path(cfg), load_images=False)
    art = Artifacts(cfg)
    ids, index_of, images = _load_cache_for(cfg, art)

    for attr in _select_attributes(cfg, manifest):
        labels, _ = _read_labels(art, attr)
        fold_of = _read_folds(art, attr)
        kept = [i for i in ids if labels.get(i, -1) >= 0]
        fdir = art.features_dir(attr)
        fdir.mkdir(parents=True, exist_ok=True)

        sums = {(c, m): np.zeros((3, 60, 60)) for c in (0, 1) for m in modes}
        counts = {c: 0 for c in (0, 1)}
        for f in range(cfg.k):
            net, cent_dict = nn.load_network(_require(art.net(attr, f), "train"))
            centering = Centering.from_dict(cent_dict)
            test_ids = [i for i in kept if fold_of[i] == f]
            X = apply_centering(images[[index_of[i] for i in test_ids]], centering)
            for row, i in enumerate(test_ids):
                c = labels[i]
                counts[c] += 1
                for m in modes:
                    fi = deconv.deconv_single(net, X[row], c, m,
                                              relu_rule=cfg.relu_rule)
                    sums[(c, m)] += fi.image

        energy_rows = []
        for c in (0, 1):
            if counts[c] == 0:
                raise EmptyClass(f"attribute {attr!r} has no class-{c} images")
            for m in modes:
                fi = deconv.FeatureImage(image=sums[(c, m)] / counts[c],
                                         attribute=attr, mask_mode=m,
                                         class_index=c,
                                         n_examples_averaged=counts[c])
                deconv.render_png(fi, fdir / f"{attr}_{c}_{m.value}.png")
                e = deconv.channel_energy_report(fi)
                energy_rows.append((attr, c, m.value, _fmt(e[0]), _fmt(e[1]),
                                    _fmt(e[2]), counts[c]))
        _write_csv(fdir / "channel_energy.csv",
                   ["attribute", "class", "mode", "energy_r", "energy_g",
                    "energy_b", "n_images"],
                   energy_rows)


def run_all(cfg: RunConfig) -> RunConfig:
    """synth (when configured) -> preprocess -> train -> evaluate -> stats
    -> visualize, returning the possibly-updated config."""
    if not cfg.manifest:
        generated = Artifacts(cfg).root / "dataset" / "manifest.csv"
        if cfg.synth_n >= 1:
            cfg = replace(cfg, manifest=str(run_synth(cfg)))
        elif not generated.is_file():
            raise ConfigError(
                "run-all needs either manifest=... or synth_n=... to generate")
    run_preprocess(cfg)
    run_train(cfg)
    run_evaluate(cfg)
    run_stats(cfg)
    run_visualize(cfg, "all")
    return cfg


def _write_csv(path: Path, header: List[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
