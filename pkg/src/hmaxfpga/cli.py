"""Command-line entry point: ``hmaxfpga <command> ...``.

Every command runs in-process. ``extract`` and ``perf`` can instead act as
thin clients of a running ``hmaxfpga serve`` via ``--server URL``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import perfmodel
from .classifiers import (BoostModel, eer_accuracy, equal_error_rate, load_model, save_model, train_gentleboost,
                          train_linear_svm_ova)
from .errors import HmaxError, UsageError
from .featio import FeatureCsvWriter, ManifestEntry, read_features, read_labels, read_manifest, write_manifest
from .imgcore import NOMINAL_SIDE, load_pgm, resize_to, save_pgm
from .pipeline import c1_bands, classifier_columns, run_batch
from .s1_gabor import dump_kernels, kernel_bank
from .s2_patches import DEFAULT_PER_SIZE, imprint, load_dictionary, save_dictionary

log = logging.getLogger("hmaxfpga")


def _load_images(manifest, resize):
    for i, e in enumerate(read_manifest(manifest)):
        try:
            img = load_pgm(e.path)
        except (HmaxError, OSError) as exc:
            log.error("skipping %s: %s", e.path, exc)
            continue
        if resize is not None and (img.width, img.height) != (resize, resize):
            img = resize_to(img, resize)
        yield i, e, img


def cmd_kernels(args):
    text = dump_kernels(kernel_bank(args.mode == "fixed"))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_imprint(args):
    corpus = [c1_bands(img, args.mode) for _, _, img in _load_images(args.manifest, args.resize)]
    if not corpus:
        raise UsageError("no readable images to imprint from")
    d = imprint(corpus, args.per_size, args.seed)
    save_dictionary(d, args.out)
    log.info("wrote %r to %s", d, args.out)


def _extract_remote(args):
    import httpx

    from .service.schemas import ExtractRequest, ImagePayload

    d_len = None
    with httpx.Client(base_url=args.server, timeout=600) as client, open(args.out, "w", newline="") as fh:
        writer = None
        for i, _, img in _load_images(args.manifest, None):
            req = ExtractRequest(image_id=i, image=ImagePayload.from_image(img), mode=args.mode,
                                 resize=args.resize)
            r = client.post("/extract", json=req.model_dump())
            if r.status_code != 200:
                log.error("image %d failed: %s", i, r.text)
                continue
            body = r.json()
            if writer is None:
                d_len = body["n_features"]
                extra = ("score", "prediction") if body.get("prediction") is not None else ()
                writer = FeatureCsvWriter(fh, d_len, extra)
            extra_vals = (format(body["score"], ".9g"), body["prediction"]) if writer.extra else ()
            writer.write(i, body["scaled"], extra_vals)
        if writer is None:
            raise UsageError("server returned no features")


def cmd_extract(args):
    if args.server:
        return _extract_remote(args)
    d = load_dictionary(args.dict)
    model = load_model(args.model) if args.model else None
    report = run_batch(args.manifest, d, args.out, model=model, mode=args.mode, threads=args.threads,
                       resize=args.resize)
    print(f"{report.images} images, {report.errors} errors, {report.images_per_sec:.2f} images/sec",
          file=sys.stderr)


def _aligned_labels(ids, labels_path):
    labels = read_labels(labels_path)
    if ids.size and ids.max() < labels.size:
        return labels[ids]
    if labels.size == ids.size:
        return labels
    raise UsageError(f"{labels_path}: {labels.size} labels do not cover {ids.size} feature rows")


def cmd_train_boost(args):
    ids, X = read_features(args.features)
    y = _aligned_labels(ids, args.labels)
    if set(np.unique(y)) <= {0, 1}:
        y = np.where(y > 0, 1, -1)
    model = train_gentleboost(X, y, args.rounds)
    save_model(model, args.out)
    log.info("trained %d trees on %d examples", len(model), X.shape[0])


def cmd_train_svm(args):
    ids, X = read_features(args.features)
    y = _aligned_labels(ids, args.labels)
    classes = args.classes or int(y.max()) + 1
    model = train_linear_svm_ova(X, y, classes, C=args.C, seed=args.seed, epochs=args.epochs)
    save_model(model, args.out)
    log.info("trained %d-class SVM on %d examples", classes, X.shape[0])


def cmd_predict(args):
    ids, X = read_features(args.features)
    model = load_model(args.model)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image_id",) + classifier_columns(model))
        if isinstance(model, BoostModel):
            scores = np.atleast_1d(model.decision_function(X))
            preds = np.where(scores >= 0, 1, -1)
        else:
            all_scores = model.decision_function(X)
            preds = np.argmax(all_scores, axis=1)
            scores = all_scores[np.arange(len(preds)), preds]
        for i, s, p in zip(ids, scores, preds):
            w.writerow((int(i), format(float(s), ".9g"), int(p)))


def cmd_eval_eer(args):
    with open(args.scores, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "score" not in rows[0]:
        raise UsageError(f"{args.scores}: expected a CSV with a 'score' column")
    scores = np.array([float(r["score"]) for r in rows])
    if "label" in rows[0]:
        labels = np.array([int(r["label"]) for r in rows])
    elif args.labels:
        ids = np.array([int(r["image_id"]) for r in rows]) if "image_id" in rows[0] else np.arange(len(rows))
        labels = _aligned_labels(ids, args.labels)
    else:
        raise UsageError("scores file has no 'label' column; pass --labels")
    labels = np.where(labels > 0, 1, -1)
    acc = eer_accuracy(scores, labels)
    print(f"eer {equal_error_rate(scores, labels):.6f}")
    print(f"accuracy {acc:.6f}")


def _parse_sweep(spec: str) -> list[int]:
    try:
        a, b, step = (int(v) for v in spec.split(":"))
    except ValueError:
        raise UsageError(f"--sweep expects SIDE_START:SIDE_STOP:STEP, got {spec!r}") from None
    if step < 1 or a < 1 or b < a:
        raise UsageError(f"invalid sweep {spec!r}")
    return [s * s for s in range(a, b + 1, step)]


def cmd_perf(args):
    clock = args.clock_mhz * 1e6
    if args.server:
        import httpx

        r = httpx.get(f"{args.server.rstrip('/')}/perf",
                      params={"pixels": args.pixels, "clock_mhz": args.clock_mhz, "c1_convention": args.c1_convention})
        r.raise_for_status()
        body = r.json()
        res, tim = body["resources"], body["timing"]
    else:
        res = asdict(perfmodel.memory_report(args.pixels))
        tim = asdict(perfmodel.timing_report(args.pixels, clock, args.c1_convention))
    macs = perfmodel.mac_counts()
    print(f"MACs per location: dense {macs.dense}, separable {macs.separable}, "
          f"folded {macs.separable_folded}, S2 (250/size) {macs.s2_per_location}")
    for k, v in res.items():
        print(f"{k:24s} {v}")
    for k, v in tim.items():
        print(f"{k:24s} {v}")
    if args.csv:
        ns = _parse_sweep(args.sweep) if args.sweep else [args.pixels]
        perfmodel.scalability_csv(ns, clock, args.csv, args.c1_convention)


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(load_dictionary(args.dict) if args.dict else None,
                     load_model(args.model) if args.model else None, args.threads)
    uvicorn.run(app, host=args.host, port=args.port)


def cmd_synth(args):
    from . import synth

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = synth.two_class_set(args.seed, args.n_per_class)
    entries = []
    for i, (img, lab) in enumerate(zip(images, labels)):
        p = out / f"img{i:05d}.pgm"
        save_pgm(img, p)
        entries.append(ManifestEntry(Path(p.name), int(lab)))
    write_manifest(entries, out / "manifest.txt")
    print(out / "manifest.txt")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmaxfpga", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def resize_opts(sp):
        sp.add_argument("--resize", type=int, default=NOMINAL_SIDE, help="prescale side (default 128)")
        sp.add_argument("--no-resize", dest="resize", action="store_const", const=None)

    sp = sub.add_parser("kernels", help="dump the S1 kernel bank as text")
    sp.add_argument("--mode", choices=("fixed", "float"), default="fixed")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_kernels)

    sp = sub.add_parser("imprint", help="build a patch dictionary from C1 outputs")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--per-size", type=int, default=DEFAULT_PER_SIZE)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=("fixed", "float"), default="fixed")
    sp.add_argument("--out", required=True)
    resize_opts(sp)
    sp.set_defaults(func=cmd_imprint)

    sp = sub.add_parser("extract", help="compute C2 features for a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--dict")
    sp.add_argument("--mode", choices=("fixed", "float"), default="fixed")
    sp.add_argument("--out", required=True, help=".csv (scaled) or .hmxc (raw fixed-mode integers)")
    sp.add_argument("--model", help="optional classifier to apply in the loop")
    sp.add_argument("--threads", type=int, help="worker cap (default: HMAX_THREADS)")
    sp.add_argument("--server", help="URL of a running 'hmaxfpga serve'")
    resize_opts(sp)
    sp.set_defaults(func=cmd_extract)

    for name, fn in (("train-boost", cmd_train_boost), ("train-svm", cmd_train_svm)):
        sp = sub.add_parser(name)
        sp.add_argument("--features", required=True)
        sp.add_argument("--labels", required=True, help="one label per line, or a labelled manifest")
        sp.add_argument("--out", required=True)
        if name == "train-boost":
            sp.add_argument("--rounds", type=int, default=1280)
        else:
            sp.add_argument("--classes", type=int)
            sp.add_argument("--C", type=float, default=1.0)
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--epochs", type=int, default=1000)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("predict")
    sp.add_argument("--features", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval-eer", help="accuracy at the equal-error point of a score file")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--labels")
    sp.set_defaults(func=cmd_eval_eer)

    sp = sub.add_parser("perf", help="analytic memory and throughput model")
    sp.add_argument("--pixels", type=int, default=NOMINAL_SIDE * NOMINAL_SIDE)
    sp.add_argument("--clock-mhz", type=float, default=100.0)
    sp.add_argument("--csv")
    sp.add_argument("--sweep", help="SIDE_START:SIDE_STOP:STEP image sides for the CSV")
    sp.add_argument("--c1-convention", choices=("exact", "paper"), default="exact")
    sp.add_argument("--server")
    sp.set_defaults(func=cmd_perf)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--dict")
    sp.add_argument("--model")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("synth", help="write a seeded gratings-vs-noise PGM set with a manifest")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n-per-class", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "command", None) == "extract" and not args.server and not args.dict:
        print("hmaxfpga extract: --dict is required unless --server is given", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except UsageError as exc:
        print(f"hmaxfpga {args.command}: {exc}", file=sys.stderr)
        return 2
    except (HmaxError, OSError) as exc:
        print(f"hmaxfpga {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
