"""Command-line surface: enhance, bench, info, mix, gradcheck.

Exit codes: 0 ok, 1 runtime error, 2 usage error. Machine-readable output is
JSON behind --json (schemas info.v1 / bench.v1, documented in the README).
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import losses
from .engine import (
    REFERENCE_MACS_PER_S,
    REFERENCE_PARAMS,
    REFERENCE_RTF,
    REFERENCE_RTF_NOTE,
    Engine,
    ModelConfig,
    build,
    count_macs,
    count_params,
    load_weights,
)
from .errors import PseError, UsageError
from .mixer import EMBED_DIM, MixSpec, gen_dataset, stub_embed
from .numerics import SeededRng
from .wavio import wav_read, wav_write


def _load_engine_arg(args) -> Engine:
    if getattr(args, "weights", None):
        config, store = load_weights(args.weights)
        return Engine(config, store)
    config = ModelConfig.default(getattr(args, "sample_rate", 48000))
    _, engine = build(config, seed=getattr(args, "seed", 0) or 0)
    return engine


def _read_embedding(args, engine: Engine) -> np.ndarray:
    if args.embedding:
        raw = Path(args.embedding).read_bytes()
        expect = 4 * engine.config.embed_dim
        if len(raw) != expect:
            raise UsageError(
                f"{args.embedding}: embedding file must be exactly {expect} bytes "
                f"({engine.config.embed_dim} little-endian float32), got {len(raw)}"
            )
        return np.frombuffer(raw, dtype="<f4").copy()
    return stub_embed(wav_read(args.enroll))


def cmd_enhance(args) -> int:
    config, store = load_weights(args.weights)
    engine = Engine(config, store)
    noisy = wav_read(args.input)
    emb = _read_embedding(args, engine)
    out = (
        engine.enhance_streaming(noisy, emb) if args.stream else engine.enhance_offline(noisy, emb)
    )
    wav_write(args.output, out, encoding=args.encoding)
    print(f"wrote {args.output} ({out.duration:.2f} s @ {out.sample_rate} Hz)")
    return 0


def cmd_bench(args) -> int:
    if args.seconds < 1:
        raise UsageError(f"--seconds must be >= 1, got {args.seconds}")
    engine = _load_engine_arg(args)
    cfg = engine.config
    rng = SeededRng(args.seed)
    n = int(args.seconds * cfg.sample_rate)
    audio = (2.0 * rng.u01_array(n) - 1.0).astype(np.float32) * 0.1
    emb = (2.0 * rng.u01_array(cfg.embed_dim) - 1.0).astype(np.float32)
    emb /= max(float(np.linalg.norm(emb)), 1e-12)

    hop = cfg.hop
    n_chunks = n // hop
    rtfs = []
    timers: dict[str, float] = {}
    # BLAS pools are capped to the requested thread count so the default run
    # is genuinely single-threaded.
    with threadpool_limits(limits=args.threads):
        for _ in range(args.repeat):
            state = engine.new_stream()
            t0 = time.perf_counter()
            for i in range(n_chunks):
                engine.stream_push(state, audio[i * hop : (i + 1) * hop], emb, timers=timers)
            wall = time.perf_counter() - t0
            rtfs.append(wall / (n_chunks * hop / cfg.sample_rate))
    median = statistics.median(rtfs)
    total_time = sum(timers.values()) or 1.0
    shares = {k: v / total_time for k, v in sorted(timers.items())}

    if args.json:
        print(
            json.dumps(
                {
                    "schema": "bench.v1",
                    "seconds": args.seconds,
                    "threads": args.threads,
                    "rtf_runs": rtfs,
                    "rtf_median": median,
                    "module_share": shares,
                    "reference_rtf": REFERENCE_RTF,
                }
            )
        )
    else:
        print(f"audio: {args.seconds:.1f} s @ {cfg.sample_rate} Hz, {args.repeat} run(s)")
        for i, r in enumerate(rtfs):
            print(f"  run {i}: RTF {r:.3f}")
        print(f"RTF (median): {median:.3f}  [threads={args.threads}]")
        print(f"reference: RTF {REFERENCE_RTF} ({REFERENCE_RTF_NOTE})")
        print("time share by stage:")
        for k, v in shares.items():
            print(f"  {k:<9} {100.0 * v:5.1f}%")
    return 0


def cmd_info(args) -> int:
    engine = None
    if args.weights:
        config, store = load_weights(args.weights)
        engine = Engine(config, store)
    else:
        config = ModelConfig.default(args.sample_rate)
    params = count_params(config)
    macs = count_macs(config, 1.0)
    if args.json:
        print(
            json.dumps(
                {
                    "schema": "info.v1",
                    "config": config.to_json_dict(),
                    "params": params,
                    "macs_per_second": macs["per_second"],
                    "macs_per_second_total": macs["per_second_total"],
                    "reference": {
                        "params": REFERENCE_PARAMS,
                        "macs_per_second": REFERENCE_MACS_PER_S,
                        "rtf": REFERENCE_RTF,
                    },
                }
            )
        )
        return 0
    print(f"bands (K):        {config.n_bands}")
    print(f"sample rate:      {config.sample_rate} Hz, fft {config.fft_size}, hop {config.hop}")
    print(
        f"features:         N={config.n_features} H={config.gru_hidden} "
        f"C1={config.attn_channels} C2={config.embed_dim} mlp={config.mlp_hidden}"
    )
    print(
        f"blocks:           {config.n_blocks} "
        f"(band RNN {'bi' if config.band_bidirectional else 'uni'}directional)"
    )
    print("parameters:")
    for key in ("split", "merge", "temporal", "band", "sam"):
        print(f"  {key:<9} {params[key]:>12,}")
    print(f"  {'total':<9} {params['total']:>12,}")
    print("MACs per second of audio:")
    for key, val in macs["per_second"].items():
        print(f"  {key:<9} {val:>16,}")
    print(f"  {'total':<9} {macs['per_second_total']:>16,}")
    print(
        f"reference: {REFERENCE_PARAMS / 1e6:.2f} M params, "
        f"{REFERENCE_MACS_PER_S / 1e9:.2f} G MACs/s, RTF {REFERENCE_RTF}"
    )
    if engine is not None:
        print(f"weights: {len(engine.store)} tensors, {engine.store.param_count():,} values")
    return 0


def cmd_mix(args) -> int:
    clean = sorted(Path(args.clean_dir).glob("*.wav"))
    noise = sorted(Path(args.noise_dir).glob("*.wav"))
    if not clean:
        raise UsageError(f"no .wav files in --clean-dir {args.clean_dir}")
    if not noise:
        raise UsageError(f"no .wav files in --noise-dir {args.noise_dir}")
    spec = MixSpec(
        clip_seconds=args.clip_seconds,
        p_interferer=args.p_interferer,
        p_reverb=args.p_reverb,
        seed=args.seed,
    )
    manifest = gen_dataset(args.out, clean, noise, spec, args.clips)
    print(f"wrote {args.clips} clip triple(s); manifest at {manifest}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for s in range(3):
        rng = SeededRng(args.seed + s)
        mags = 0.2 + np.array(rng.u01_array(2 * 4 * 6))
        phases = 2.0 * np.pi * np.array(rng.u01_array(2 * 4 * 6))
        z = (mags * np.exp(1j * phases)).reshape(2, 4, 6)
        for c in (0.3, 0.5, 1.0):
            err = losses.gradient_check(z[0], z[1], c)
            worst = max(worst, err)
            print(f"seed {args.seed + s} c={c}: max relative error {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance 1e-4)")
    if worst > 1e-4:
        print("gradcheck FAILED", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pse", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("enhance", help="enhance a WAV file with an enrolled speaker")
    pe.add_argument("--in", dest="input", required=True)
    pe.add_argument("--out", dest="output", required=True)
    pe.add_argument("--weights", required=True, help="model weight file (.pbw)")
    group = pe.add_mutually_exclusive_group(required=True)
    group.add_argument("--enroll", help="enrollment WAV (embedding via the built-in stub)")
    group.add_argument(
        "--embedding", help=f"raw {EMBED_DIM} x float32 little-endian embedding file"
    )
    pe.add_argument("--stream", action="store_true", help="use the streaming path")
    pe.add_argument("--encoding", choices=("float32", "pcm16"), default="float32")
    pe.set_defaults(fn=cmd_enhance)

    pb = sub.add_parser("bench", help="measure the single-thread real-time factor")
    pb.add_argument("--weights")
    pb.add_argument("--default-config", action="store_true", help="bench a fresh default model")
    pb.add_argument("--sample-rate", type=int, default=48000)
    pb.add_argument("--seconds", type=float, default=10.0)
    pb.add_argument("--repeat", type=int, default=3)
    pb.add_argument("--threads", type=int, default=1, help="informational; engine is 1-thread")
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--json", action="store_true")
    pb.set_defaults(fn=cmd_bench)

    pi = sub.add_parser("info", help="print parameter and MAC breakdowns")
    gi = pi.add_mutually_exclusive_group(required=True)
    gi.add_argument("--weights")
    gi.add_argument("--default-config", action="store_true")
    pi.add_argument("--sample-rate", type=int, default=48000)
    pi.add_argument("--json", action="store_true")
    pi.set_defaults(fn=cmd_info)

    pm = sub.add_parser("mix", help="synthesize a small noisy/target/enroll dataset")
    pm.add_argument("--clean-dir", required=True)
    pm.add_argument("--noise-dir", required=True)
    pm.add_argument("--out", required=True)
    pm.add_argument("--clips", type=int, default=10)
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--clip-seconds", type=float, default=4.0)
    pm.add_argument("--p-interferer", type=float, default=0.5)
    pm.add_argument("--p-reverb", type=float, default=0.5)
    pm.set_defaults(fn=cmd_mix)

    pg = sub.add_parser("gradcheck", help="check analytic loss gradients vs finite differences")
    pg.add_argument("--seed", type=int, default=0)
    pg.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
