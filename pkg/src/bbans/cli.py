"""Command line front end: ``hllc compress | decompress | bench | selftest``."""
import argparse
import csv
import io
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import ans_core, vector_ans
from .container import CRC_BYTES, HEADER_BYTES, Archive, pack, unpack
from .image_codec import CoderSettings, PatchPlan, compress_dataset, decompress_dataset
from .pnm import read_pnm, write_pnm
from .toy_models import MODEL_DIGESTS, MODEL_IDS, model_from_id

DEFAULT_MODEL = 2
DEFAULT_LANES = (1, 4, 16, 64, 256, 1024, 4096, 16384, 65536)


def _settings(precision, bins_log2):
    if not 1 <= bins_log2 <= 16:
        raise ValueError("bins-log2 must be in [1, 16]")
    return CoderSettings(n_bins=1 << bins_log2, precision=precision)


def cmd_compress(inputs, output, model_id=DEFAULT_MODEL, plan=None, precision=16,
                 bins_log2=12, seed=0, report=None, out=sys.stdout):
    images = [read_pnm(p) for p in inputs]
    plan = plan or PatchPlan()
    model = model_from_id(model_id)
    words, rates = compress_dataset(images, model, plan, settings=_settings(precision, bins_log2),
                                    rng_seed=seed)
    data = pack(Archive(model_id, precision, bins_log2, len(images), words))
    Path(output).write_bytes(data)
    for label, (n, mean, se) in rates.stage_summary().items():
        print(f"{label}: {n} images, {mean:.4f} bits/dim (se {se:.4f})", file=out)
    rows = [("container", 8 * (HEADER_BYTES + CRC_BYTES)), ("seed", rates.seed_bits)]
    for label in dict.fromkeys(r.stage for r in rates.records):
        rows.append((f"stage:{label}", sum(r.bits for r in rates.records if r.stage == label)))
    rows.append(("coder_overhead", rates.overhead_bits))
    if report:
        with open(report, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["component", "bits"])
            w.writerows((name, f"{bits:.6f}") for name, bits in rows)
            w.writerow(["total", 8 * len(data)])
    print(f"wrote {output}: {len(data)} bytes for {len(images)} images", file=out)
    return rows, len(data)


def cmd_decompress(archive_path, output_dir, out=sys.stdout):
    archive = unpack(Path(archive_path).read_bytes())
    model = model_from_id(archive.model_id)
    images, _ = decompress_dataset(archive.words, model, archive.count,
                                   settings=_settings(archive.precision, archive.bins_log2))
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, x in enumerate(images):
        path = output_dir / f"image_{i:05d}.{'pgm' if x.shape[2] == 1 else 'ppm'}"
        write_pnm(path, x)
        paths.append(path)
    print(f"decoded {len(images)} images into {output_dir}", file=out)
    return paths


def _bench_distribution():
    return ans_core.quantize(np.exp(-np.arange(256) / 40.0), 16)


def _time(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _scalar_rates(dist, symbols):
    state = [ans_core.empty_state()]

    def enc():
        s = ans_core.empty_state()
        for x in symbols:
            s = ans_core.push(s, x, dist)
        state[0] = s

    def dec():
        s = state[0]
        for _ in symbols:
            s, _ = ans_core.pop(s, dist)
    te = _time(enc)
    td = _time(dec)
    return len(symbols) / te, len(symbols) / td


def _vector_rates(dist, symbols):
    steps, lanes = symbols.shape
    state = [None]

    def enc():
        m = vector_ans.empty_message((lanes,))
        for row in symbols:
            m = vector_ans.vpush(m, row, dist)
        state[0] = m

    def dec():
        m = state[0]
        for _ in range(steps):
            m, _ = vector_ans.vpop(m, dist)
    te = _time(enc)
    td = _time(dec)
    return symbols.size / te, symbols.size / td


def cmd_bench(lanes=DEFAULT_LANES, symbols=1 << 17, scalar_symbols=1 << 15, seed=0, out=sys.stdout):
    """CSV of symbols/second for the scalar coder and the vectorized coder.

    The vectorized coder runs ``symbols`` pushes spread over each lane count;
    the scalar figure is lane independent and measured once.
    """
    # The lanes are coded by one thread; HLLC_THREADS can only lower that.
    threads = 1
    cap = os.environ.get("HLLC_THREADS")
    if cap is not None and int(cap) < 1:
        raise ValueError("HLLC_THREADS must be >= 1")
    dist = _bench_distribution()
    rng = np.random.default_rng(seed)
    p = dist.probabilities()
    s_enc, s_dec = _scalar_rates(dist, rng.choice(256, scalar_symbols, p=p).tolist())
    rows = []
    for n in lanes:
        steps = max(4, symbols // n)
        v_enc, v_dec = _vector_rates(dist, rng.choice(256, (steps, n), p=p))
        rows.append({"lanes": n, "threads": threads,
                     "scalar_encode_sps": round(s_enc), "scalar_decode_sps": round(s_dec),
                     "vector_encode_sps": round(v_enc), "vector_decode_sps": round(v_dec),
                     "speedup_encode": round(v_enc / s_enc, 3),
                     "speedup_decode": round(v_dec / s_dec, 3)})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    out.write(buf.getvalue())
    return rows


def cmd_selftest(seed=0, digests=None, out=sys.stdout):
    """Reduced invariant suites; returns 0 when everything passes."""
    from .selftest import run_checks
    results = run_checks(seed, MODEL_DIGESTS if digests is None else digests)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""), file=out)
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=out)
    return 1 if failed else 0


def _lanes(text):
    values = [int(v) for v in text.split(",") if v.strip()]
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("lanes must be positive integers")
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="hllc", description="Bits-back image compression with toy latent models.")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="compress PGM/PPM images into an archive")
    c.add_argument("inputs", nargs="*", type=Path)
    c.add_argument("-o", "--output", required=True, type=Path)
    c.add_argument("--model", type=int, default=DEFAULT_MODEL, choices=sorted(MODEL_IDS))
    c.add_argument("--precision", type=int, default=16)
    c.add_argument("--bins-log2", type=int, default=12)
    c.add_argument("--plan", type=Path)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--report", type=Path)

    d = sub.add_parser("decompress", help="decode an archive into numbered PGM/PPM files")
    d.add_argument("archive", type=Path)
    d.add_argument("-o", "--output", required=True, type=Path)

    b = sub.add_parser("bench", help="scalar vs vectorized ANS throughput as CSV")
    b.add_argument("--lanes", type=_lanes, default=list(DEFAULT_LANES))
    b.add_argument("--symbols", type=int, default=1 << 17)
    b.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("selftest", help="run reduced invariant checks")
    s.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compress":
            plan = PatchPlan.parse(args.plan.read_text()) if args.plan else None
            cmd_compress(args.inputs, args.output, args.model, plan, args.precision,
                         args.bins_log2, args.seed, args.report)
        elif args.command == "decompress":
            cmd_decompress(args.archive, args.output)
        elif args.command == "bench":
            cmd_bench(args.lanes, args.symbols, seed=args.seed)
        else:
            return cmd_selftest(args.seed)
    except (OSError, ValueError) as err:
        print(f"hllc: error: {err}", file=sys.stderr)
        return 2
    return 0

