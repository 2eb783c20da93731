"""``nrtr`` command line: train, recognize, eval, gradcheck, synth.

Exit codes: 0 success, 1 failed check or internal error, 2 usage,
configuration or I/O problem, 3 corrupt checkpoint or malformed input.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import KERNEL_BACKEND, __version__
from .errors import ConfigError, IntegrityError, NRTRError, ParseError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3


def _pairs(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def cmd_train(args) -> int:
    from .config import load_config
    from .train import train

    cfg = load_config(args.config)
    if args.set:
        cfg = cfg.with_overrides(_pairs(args.set))
    out = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        res = train(cfg, resume=args.resume, out=out)
    finally:
        if args.log:
            out.close()
    logging.info("trained to step %d; %d checkpoints in %s", res.optimizer.step_count, len(res.checkpoints),
                 cfg.ckpt_dir)
    if res.average:
        logging.info("averaged checkpoint: %s", res.average)
    return EXIT_OK


def cmd_recognize(args) -> int:
    from .data import collate, load_pgm
    from .train import load_model

    model = load_model(args.ckpt)
    gran = 2 ** model.config.conv_layers
    for path in args.image:
        batch = collate([load_pgm(path)], [0], gran, targets=False)
        res = model.recognize(batch.images, batch.widths, args.max_len)[0]
        print(f"{path}\t{res.text}" if len(args.image) > 1 else res.text)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_manifest
    from .train import evaluate, load_model

    samples = load_manifest(args.manifest)
    if not samples:
        raise ConfigError(f"manifest {args.manifest} lists no images")
    model = load_model(args.ckpt)
    rep = evaluate(model, samples, args.bucket_width)
    if args.predictions:
        for s, p in zip(samples, rep.predictions):
            print(f"{s.label}\t{p}\t{int(s.label == p)}")
    print(rep.tsv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    ok = True
    for seed in args.seed or [0]:
        res = run_suite(seed)
        for name, err in res.errors.items():
            print(f"{seed}\t{name}\t{err:.3e}\t{'ok' if err < TOLERANCE else 'FAIL'}")
        ok &= res.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth(args) -> int:
    from .config import ALPHABETS
    from .data import CorpusSpec, quantize, synth_corpus, write_corpus

    if args.alphabet not in ALPHABETS:
        raise ConfigError(f"alphabet must be one of {sorted(ALPHABETS)}")
    spec = CorpusSpec(size=args.size, min_len=args.min_len, max_len=args.max_len, alphabet=ALPHABETS[args.alphabet])
    samples = [quantize(s) for s in synth_corpus(spec, args.seed, args.split)]
    print(write_corpus(samples, args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrtr", description="No-recurrence scene-text recognizer.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({KERNEL_BACKEND} kernels)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True, help="config file or preset name (tiny, base, big)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--log", help="write the step/lrate/loss TSV here instead of stdout")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("recognize", help="transcribe PGM images")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True, nargs="+")
    r.add_argument("--max-len", type=int, default=16)
    r.set_defaults(fn=cmd_recognize)

    e = sub.add_parser("eval", help="score a checkpoint on a manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True, help="TSV of relative_path<TAB>label")
    e.add_argument("--bucket-width", type=int, default=32)
    e.add_argument("--predictions", action="store_true", help="also print label/prediction rows")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--seed", type=int, action="append", help="repeat for several seeds")
    g.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic PGM corpus and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", type=int, default=1)
    s.add_argument("--min-len", type=int, default=1)
    s.add_argument("--max-len", type=int, default=6)
    s.add_argument("--alphabet", default="full")
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (IntegrityError, ParseError) as exc:
        print(f"nrtr: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (NRTRError, OSError) as exc:
        print(f"nrtr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logging.exception("internal error: %s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
