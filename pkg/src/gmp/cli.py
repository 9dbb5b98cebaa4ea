"""Command-line surface and model persistence.

Subcommands: ``gmp build-vocab | encode | train | eval | synth``.  Every
command is deterministic given its flags and seeds.  Exit codes: 0 on
success, 2 for usage/argument errors, 3 for data or format errors, 4 for
numerical failures.

A model file is a single self-describing container: magic ``GMPM``, a
version word, a JSON header describing every array (name, dtype, shape,
offset) plus scalar configuration, then the raw little-endian float
payload.  The header carries a SHA-256 digest of the payload, verified on
load; a reloaded model reproduces scores bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import struct
import sys
import time
from pathlib import Path

import numpy as np

from .encoding import (
    AppearanceMap,
    KernelParams,
    encode_entity,
    read_appearance_map,
    write_appearance_map,
)
from .errors import DecodeError, FormatError, NumericalError
from .evaluation import evaluate_protocol, write_cmc_svg, write_report_csv
from .imaging import hsv_patch_features, load_image, read_feature_field, rgb_to_hsv
from .scoring import BilinearModel, PairCoefficients, PairWeights, SharedWeights
from .synthgen import SynthSpec, generate
from .training import (
    TrainConfig,
    TrainingData,
    sample_groups,
    train_direct_two_view,
    train_pairwise,
    write_training_log,
)
from .vocab import (
    Vocabulary,
    export_centroids_csv,
    kmeans_fit,
    quantize,
    read_centroids_csv,
    sample_training_features,
)

GMPM_MAGIC = b"GMPM"
GMPM_VERSION = 1

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm")


# ---------------------------------------------------------------------------
# model persistence


def save_model(model: BilinearModel, path: str | Path) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for (i, j), pw in sorted(model.pair_weights.items()):
        arrays.append((f"pair_weights/{i},{j}", pw.matrix))
    arrays.append(("shared", model.shared.vector))
    if model.vocabs is not None:
        for v, vocab in sorted(model.vocabs.items()):
            arrays.append((f"vocab/{v}", vocab.centroids))

    payload = bytearray()
    descriptors = []
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        descriptors.append(
            {
                "name": name,
                "dtype": "<f8",
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = {
        "format": "gmp-model",
        "version": GMPM_VERSION,
        "digest": hashlib.sha256(bytes(payload)).hexdigest(),
        "arrays": descriptors,
        "kernel": {
            "sigma": model.kernel.sigma,
            "alpha": model.kernel.alpha,
            "stride": model.kernel.stride,
            "metric": model.kernel.metric,
        },
        "coeffs": {f"{i},{j}": b for (i, j), b in sorted(model.coeffs.beta.items())},
        "vocab_seeds": (
            {str(v): model.vocabs[v].seed for v in sorted(model.vocabs)}
            if model.vocabs is not None
            else None
        ),
        "meta": model.meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = GMPM_MAGIC + struct.pack("<IQ", GMPM_VERSION, len(header_bytes))
    Path(path).write_bytes(blob + header_bytes + payload)


def load_model(path: str | Path) -> BilinearModel:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header, {len(data)} bytes at offset 0")
    if data[:4] != GMPM_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    version, header_len = struct.unpack("<IQ", data[4:16])
    if version != GMPM_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if len(data) < 16 + header_len:
        raise FormatError(f"{path}: truncated JSON header at offset 16")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad JSON header at offset 16: {exc}") from exc
    payload = data[16 + header_len :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("digest"):
        raise FormatError(f"{path}: payload digest mismatch at offset {16 + header_len}")

    loaded: dict[str, np.ndarray] = {}
    for desc in header["arrays"]:
        off, nbytes = desc["offset"], desc["nbytes"]
        if off + nbytes > len(payload):
            raise FormatError(
                f"{path}: array {desc['name']} overruns payload at offset {16 + header_len + off}"
            )
        arr = np.frombuffer(payload, dtype=desc["dtype"], count=nbytes // 8, offset=off)
        loaded[desc["name"]] = arr.reshape(desc["shape"]).copy()

    pair_weights = {}
    coeffs = {}
    for key, beta in header["coeffs"].items():
        i, j = (int(t) for t in key.split(","))
        name = f"pair_weights/{key}"
        if name not in loaded:
            raise FormatError(f"{path}: missing array {name}")
        pair_weights[(i, j)] = PairWeights(view_pair=(i, j), matrix=loaded[name])
        coeffs[(i, j)] = float(beta)
    vocabs = None
    if header.get("vocab_seeds") is not None:
        vocabs = {}
        for v_str, seed in header["vocab_seeds"].items():
            v = int(v_str)
            vocabs[v] = Vocabulary(view=v, centroids=loaded[f"vocab/{v}"], seed=seed)
    kern = header["kernel"]
    return BilinearModel(
        pair_weights=pair_weights,
        shared=SharedWeights(loaded["shared"]),
        coeffs=PairCoefficients(coeffs),
        vocabs=vocabs,
        kernel=KernelParams(
            sigma=kern["sigma"], alpha=kern["alpha"], stride=kern["stride"],
            metric=kern.get("metric", "chessboard"),
        ),
        meta=header.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# shared plumbing


class UsageError(Exception):
    pass


def _parse_hw(text: str, flag: str) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"{flag} expects HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise UsageError(f"{flag} dimensions must be positive, got {text!r}")
    return h, w


def read_labels_csv(path: str | Path) -> dict[int, dict[str, str]]:
    """Parse an entity_id,view,identity CSV into view -> entity -> identity."""
    labels: dict[int, dict[str, str]] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "entity_id":
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: expected 3 columns, got {row}")
            entity, view, ident = row
            labels.setdefault(int(view), {})[entity] = ident
    if not labels:
        raise FormatError(f"{path}: no label rows")
    return labels


def write_labels_csv(labels: dict[int, dict[str, str]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_id", "view", "identity"])
        for view in sorted(labels):
            for entity in sorted(labels[view]):
                writer.writerow([entity, view, labels[view][entity]])


def load_encoded_dirs(dirs: list[str]) -> dict[int, dict[str, AppearanceMap]]:
    maps: dict[int, dict[str, AppearanceMap]] = {}
    grid = None
    for d in dirs:
        files = sorted(Path(d).glob("*.gmpe"))
        if not files:
            raise UsageError(f"no .gmpe files in {d}")
        for f in files:
            amap = read_appearance_map(f)
            key = (amap.grid_h, amap.grid_w, amap.stride)
            if grid is None:
                grid = key
            elif key != grid:
                raise FormatError(
                    f"{f}: location grid {key} differs from {grid}; all entities "
                    "must share one (height, width, stride)"
                )
            view_maps = maps.setdefault(amap.view, {})
            if f.stem in view_maps:
                raise UsageError(f"duplicate entity {f.stem!r} for view {amap.view}")
            view_maps[f.stem] = amap
    return maps


def _entity_of(path: Path) -> str:
    stem = path.stem
    return stem.rsplit("_", 1)[0] if "_" in stem else stem


def _fields_for_dir(
    directory: Path, image_size: tuple[int, int], patch: tuple[int, int]
):
    """Yield (entity, FeatureField) for every image or .gmpf file."""
    files = sorted(p for p in directory.iterdir() if p.is_file())
    inputs = [p for p in files if p.suffix.lower() in IMAGE_SUFFIXES + (".gmpf",)]
    if not inputs:
        raise UsageError(f"no images or .gmpf files in {directory}")
    for p in inputs:
        if p.suffix.lower() == ".gmpf":
            yield _entity_of(p), read_feature_field(p)
        else:
            grid = load_image(p, image_size)
            if grid.channels == 3:
                grid = rgb_to_hsv(grid)
            yield _entity_of(p), hsv_patch_features(grid, patch)


def _dataset_digest(root: Path) -> str:
    sha = hashlib.sha256()
    for f in sorted(root.rglob("*")):
        if f.is_file() and f.name != "manifest.json":
            sha.update(f.relative_to(root).as_posix().encode())
            sha.update(f.read_bytes())
    return sha.hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_vocab(args: argparse.Namespace) -> int:
    image_size = _parse_hw(args.image_size, "--image-size")
    patch = _parse_hw(args.patch, "--patch")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for view, d in enumerate(args.view_dirs):
        fields = [f for _, f in _fields_for_dir(Path(d), image_size, patch)]
        dims = {f.dim for f in fields}
        if len(dims) > 1:
            raise FormatError(f"{d}: mixed feature dims {sorted(dims)}")
        samples = sample_training_features(fields, args.n_features, seed=args.seed + view)
        vocab = kmeans_fit(samples, args.k, seed=args.seed + view, view=view)
        dest = out / f"vocab_view{view}.csv"
        export_centroids_csv(vocab, dest)
        print(f"view {view}: {vocab.k} words of dim {vocab.dim} -> {dest}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    image_size = _parse_hw(args.image_size, "--image-size")
    patch = _parse_hw(args.patch, "--patch")
    vocab = read_centroids_csv(args.vocab, view=args.view)
    params = KernelParams(sigma=args.sigma, alpha=args.alpha, stride=args.stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stacks: dict[str, list] = {}
    for entity, field in _fields_for_dir(Path(args.input_dir), image_size, patch):
        stacks.setdefault(entity, []).append(quantize(field, vocab))
    entry_counts, byte_counts = [], []
    for entity in sorted(stacks):
        amap = encode_entity(stacks[entity], params, view=args.view)
        dest = out / f"{entity}.gmpe"
        write_appearance_map(amap, dest)
        entry_counts.append(amap.matrix.nnz)
        byte_counts.append(dest.stat().st_size)
    print(
        f"encoded {len(stacks)} entities: mean {np.mean(entry_counts):.0f} entries, "
        f"mean {np.mean(byte_counts):.0f} bytes"
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    grid = _parse_hw(args.grid, "--grid")
    spec = SynthSpec(
        n_views=args.views,
        n_identities=args.identities,
        images_per_entity=args.images_per_entity,
        grid=grid,
        n_parts=args.parts,
        k_words=args.k,
        word_noise=args.noise,
        jitter=args.jitter,
        seed=args.seed,
    )
    params = KernelParams(sigma=args.sigma, alpha=args.alpha, stride=args.stride)
    dataset = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels: dict[int, dict[str, str]] = {}
    for v in dataset.views:
        view_dir = out / f"view{v}"
        view_dir.mkdir(exist_ok=True)
        labels[v] = {}
        for entity, stack in sorted(dataset.grids[v].items()):
            amap = encode_entity(stack, params, view=v)
            write_appearance_map(amap, view_dir / f"{entity}.gmpe")
            labels[v][entity] = str(dataset.identities[v][entity])
        # scalar-word vocabulary: centroid j is the word index itself
        vocab = Vocabulary(view=v, centroids=np.arange(spec.k_words, dtype=np.float64)[:, None], seed=spec.seed)
        export_centroids_csv(vocab, out / f"vocab_view{v}.csv")
    write_labels_csv(labels, out / "labels.csv")
    manifest = {
        "spec": {
            "n_views": spec.n_views,
            "n_identities": spec.n_identities,
            "images_per_entity": spec.images_per_entity,
            "grid": list(spec.grid),
            "n_parts": spec.n_parts,
            "k_words": spec.k_words,
            "word_noise": spec.word_noise,
            "jitter": spec.jitter,
            "seed": spec.seed,
        },
        "kernel": {"sigma": params.sigma, "alpha": params.alpha, "stride": params.stride},
        "digest": _dataset_digest(out),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"wrote {spec.n_views} views x {spec.n_identities} identities to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    maps = load_encoded_dirs(args.encoded_dirs)
    labels = read_labels_csv(args.labels)
    for v in maps:
        if v not in labels:
            raise UsageError(f"labels CSV has no rows for view {v}")
        missing = set(labels[v]) - set(maps[v])
        if missing:
            raise FormatError(f"view {v}: labeled entities without .gmpe files: {sorted(missing)[:5]}")
    samples = sample_groups(
        {v: labels[v] for v in maps}, args.n_samples, args.pos_fraction, seed=args.seed
    )
    cfg = TrainConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        lambda3=args.lambda3,
        mode=args.mode,
        max_outer=args.max_outer,
        outer_tol=args.outer_tol,
        n_samples=args.n_samples,
        pos_fraction=args.pos_fraction,
        seed=args.seed,
        svm_tol=args.svm_tol,
        svm_max_pass=args.svm_max_pass,
    )
    any_map = next(iter(maps[sorted(maps)[0]].values()))
    kernel = KernelParams(sigma=args.sigma, alpha=args.alpha, stride=any_map.stride)
    vocabs = None
    if args.vocab_dir:
        vocabs = {
            v: read_centroids_csv(Path(args.vocab_dir) / f"vocab_view{v}.csv", view=v)
            for v in sorted(maps)
        }
    data = TrainingData(maps=maps, samples=samples)
    t0 = time.perf_counter()
    if args.mode == "direct-two-view":
        run = train_direct_two_view(data, cfg, kernel=kernel, vocabs=vocabs)
    else:
        run = train_pairwise(data, cfg, kernel=kernel, vocabs=vocabs)
    elapsed = time.perf_counter() - t0

    trace = run.objective_trace
    slack = 1e-9 * (1.0 + np.abs(trace[:-1]))
    if (np.diff(trace) > slack).any():
        raise NumericalError("objective trace increased beyond tolerance")

    save_model(run.model, args.out)
    write_training_log(run, Path(args.out).with_suffix(".log.csv"))
    print(
        f"trained {args.mode} on {len(samples)} groups in {elapsed:.1f}s: "
        f"objective {trace[-1]:.6g}, converged={run.converged} -> {args.out}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    maps = load_encoded_dirs(args.encoded_dirs)
    labels = read_labels_csv(args.labels)
    identities = {}
    for v in maps:
        if v not in labels:
            raise UsageError(f"labels CSV has no rows for view {v}")
        unlabeled = set(maps[v]) - set(labels[v])
        if unlabeled:
            raise FormatError(
                f"view {v}: encoded entities without label rows: {sorted(unlabeled)[:5]}"
            )
        identities[v] = {e: labels[v][e] for e in maps[v]}
    report = evaluate_protocol(
        model,
        maps,
        identities,
        reduce_op=args.reduce,
        max_rank=args.ranks,
        trials=args.trials,
        seed=args.seed,
    )
    out = Path(args.out)
    write_report_csv(report, out)
    write_cmc_svg(report, out / "cmc.svg")
    for p in sorted(report.pairs):
        pr = report.pairs[p]
        print(
            f"pair view{p[0]}-view{p[1]}: rank-1 {pr.curve.rates[0]:.4f}, "
            f"auc {pr.auc:.4f}, verification {pr.verification:.4f}"
        )
    print(f"mean auc {report.mean_auc:.4f} ({report.reduce_op} reduction) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="fit per-view k-means vocabularies")
    p.add_argument("view_dirs", nargs="+", metavar="VIEW_DIR")
    p.add_argument("--k", type=int, default=300)
    p.add_argument("--n-features", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", default="128x48")
    p.add_argument("--patch", default="2x2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("encode", help="encode one view's entities to .gmpe files")
    p.add_argument("input_dir", metavar="INPUT_DIR")
    p.add_argument("--vocab", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--alpha", type=float, default=6.0)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--image-size", default="128x48")
    p.add_argument("--patch", default="2x2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="generate an encoded synthetic dataset")
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--images-per-entity", type=int, default=1)
    p.add_argument("--grid", default="24x12")
    p.add_argument("--parts", type=int, default=12)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a bilinear model from encoded entities")
    p.add_argument("encoded_dirs", nargs="+", metavar="ENCODED_DIR")
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", choices=("multi-view", "double-view", "direct-two-view"),
                   default="multi-view")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--lambda3", type=float, default=1.0)
    p.add_argument("--n-samples", type=int, default=30000)
    p.add_argument("--pos-fraction", type=float, default=0.5)
    p.add_argument("--max-outer", type=int, default=20)
    p.add_argument("--outer-tol", type=float, default=1e-4)
    p.add_argument("--svm-tol", type=float, default=1e-5)
    p.add_argument("--svm-max-pass", type=int, default=400)
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--alpha", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank and verify encoded probe/gallery sets")
    p.add_argument("encoded_dirs", nargs="+", metavar="ENCODED_DIR")
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--reduce", choices=("sum", "max", "auto"), default="sum")
    p.add_argument("--ranks", type=int, default=None)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
