"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 I/O or data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from stemcal import __version__, _backend
from stemcal import calibration as cal
from stemcal import harness as hs
from stemcal import metrics
from stemcal.container import ContainerError, atomic_write_bytes, read_tensor, write_tensor
from stemcal.prior import KINDS, AcousticPrior, g_norm, irm, irm_mel
from stemcal.separation import (
    BASS_CUTOFF,
    BASS_ORDER,
    HPSS_MARGIN,
    STEMS,
    aggregate,
    ingest_stems,
    map_target,
    naive_separate,
)
from stemcal.signal import (
    PRIOR_HOP,
    PRIOR_MEL_BINS,
    PRIOR_WINDOW,
    Waveform,
    log_mel,
    mel_filterbank,
    read_wav,
    stft,
    working_sample_rate,
)

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_wav_atomic(path, w: Waveform):
    buf = io.BytesIO()
    wavfile.write(buf, w.sample_rate, np.asarray(w.samples, dtype=np.float32))
    atomic_write_bytes(path, buf.getvalue())


def write_manifest(path, argv, inputs, outputs, **extra):
    """Record inputs and outputs by content hash so a run can be replayed and checked."""
    base = Path(path).parent
    manifest = {
        "tool": "stemcal",
        "version": __version__,
        "backend": _backend.NAME,
        "argv": list(argv),
        "cwd": str(Path.cwd()),
        "working_sample_rate": working_sample_rate(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {_rel(p, base): sha256_file(p) for p in outputs},
    }
    manifest.update(extra)
    atomic_write_bytes(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest


def _rel(path, base):
    path = Path(path)
    try:
        return str(path.resolve().relative_to(Path(base).resolve()))
    except ValueError:
        return str(path.resolve())


def load_mix(path, sample_rate=None) -> Waveform:
    return read_wav(path, sample_rate=sample_rate or working_sample_rate(), mono=True)


def compute_prior(mix: Waveform, label: str, stems_dir=None, kind="irm_mel"):
    if kind not in KINDS:
        raise UsageError(f"unknown prior kind {kind!r}")
    stems = ingest_stems(stems_dir, mix) if stems_dir else naive_separate(mix)
    target = map_target(label)
    tgt, con = aggregate(stems, target)
    spec_t = stft(tgt, PRIOR_WINDOW, PRIOR_HOP)
    spec_c = stft(con, PRIOR_WINDOW, PRIOR_HOP)
    if kind == "irm":
        prior = irm(spec_t, spec_c)
    elif kind == "norm":
        prior = g_norm(spec_t)
    else:
        fb = mel_filterbank(mix.sample_rate, PRIOR_WINDOW, PRIOR_MEL_BINS)
        prior = irm_mel(spec_t, spec_c, fb)
    return prior, target, stems.origin


# -- subcommands ---------------------------------------------------------


def cmd_separate(args, argv):
    mix = load_mix(args.input)
    stems = naive_separate(mix, margin=args.margin, cutoff=args.cutoff, order=args.order)
    out = Path(args.out_dir)
    outputs = []
    for name in STEMS:
        path = out / f"{name}.wav"
        write_wav_atomic(path, stems[name])
        outputs.append(path)
    write_manifest(
        out / "manifest.json", argv, [args.input], outputs,
        separator_origin=stems.origin,
        config={"margin": args.margin, "cutoff": args.cutoff, "order": args.order},
    )
    print(f"wrote {len(outputs)} stems to {out}")


def cmd_prior(args, argv):
    mix = load_mix(args.mix)
    prior, target, origin = compute_prior(mix, args.target, args.stems, args.kind)
    write_tensor(args.out, prior.values, kind=prior.kind)
    inputs = [args.mix] + ([str(Path(args.stems) / f"{s}.wav") for s in STEMS] if args.stems else [])
    write_manifest(
        f"{args.out}.manifest.json", argv, inputs, [args.out],
        separator_origin=origin, prior_kind=prior.kind,
        config={"target": args.target, "category": target.category, "kind": args.kind},
    )
    print(f"target {args.target!r} -> {target.category}; prior {prior.kind} {prior.shape} -> {args.out}")


def load_run_config(path):
    path = Path(path)
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    known = {
        "mix", "target", "prior", "stems", "steps", "lambda_max", "schedule", "layers",
        "seed", "mask_span", "guidance_scale", "output_dir", "prior_kind",
    }
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if "mix" not in cfg:
        raise UsageError("config needs a 'mix' WAV path")
    if "prior" not in cfg and "target" not in cfg:
        raise UsageError("config needs either 'prior' or 'target'")
    base = path.parent
    for key in ("mix", "prior", "stems", "output_dir"):
        if key in cfg:
            cfg[key] = str(base / cfg[key])
    cfg.setdefault("output_dir", str(base / "run_out"))
    cfg.setdefault("steps", 50)
    cfg.setdefault("seed", 0)
    cfg.setdefault("mask_span", [2, 4])
    return cfg


def execute_run(cfg):
    """invert -> edit for one config; returns the trace and the list of written files."""
    mix = load_mix(cfg["mix"])
    if "prior" in cfg:
        container = read_tensor(cfg["prior"])
        if container.kind not in KINDS:
            raise ValueError(f"prior container kind {container.kind!r} missing or unknown")
        prior = AcousticPrior(container.values.astype(np.float64), container.kind, container.values.shape)
        origin = None
    else:
        prior, _, origin = compute_prior(mix, cfg["target"], cfg.get("stems"), cfg.get("prior_kind", "irm_mel"))
    config = cal.CalibrationConfig(
        lambda_max=float(cfg.get("lambda_max", cal.DEFAULT_LAMBDA)),
        schedule=cfg.get("schedule", "constant"),
        layer_set=cfg.get("layers"),
        guidance_scale=float(cfg.get("guidance_scale", cal.DEFAULT_GUIDANCE)),
    )
    model = hs.ToyModel(seed=int(cfg["seed"]), target_span=tuple(cfg["mask_span"]))
    mask = cal.build_token_mask(model.text_len, cfg["mask_span"])
    fb = mel_filterbank(mix.sample_rate, PRIOR_WINDOW, PRIOR_MEL_BINS)
    x0 = log_mel(stft(mix, PRIOR_WINDOW, PRIOR_HOP), fb)
    z_T, cache, trajectory = hs.invert(x0, model, int(cfg["steps"]))
    trace = hs.edit(z_T, cache, prior, mask, config, model, trajectory)

    out = Path(cfg["output_dir"])
    written = save_trace(trace, out)
    written += cache.save(out / "cache")
    return trace, written, prior, origin, model


def save_trace(trace: hs.EditTrace, out) -> list:
    out = Path(out)
    write_tensor(out / "latents.f32", trace.latents, kind="latents:edit")
    write_tensor(out / "source_latents.f32", trace.source_latents, kind="latents:source")
    write_tensor(out / "entropy.f32", trace.entropy, kind="entropy")
    meta = {"layer_set": sorted(trace.layer_set), "blocks": list(hs.BLOCKS), "variants": list(hs.VARIANTS)}
    atomic_write_bytes(out / "trace.json", (json.dumps(meta, indent=2) + "\n").encode())
    # the CSV is built from the stored float32 values so `entropy` regenerates it byte for byte
    stored = hs.EditTrace(trace.latents, trace.source_latents,
                          trace.entropy.astype(np.float32).astype(np.float64), trace.layer_set)
    write_entropy_csv(stored, out / "entropy.csv")
    return [out / n for n in ("latents.f32", "source_latents.f32", "entropy.f32", "trace.json", "entropy.csv")]


def load_trace(directory) -> hs.EditTrace:
    directory = Path(directory)
    meta = json.loads((directory / "trace.json").read_text())
    return hs.EditTrace(
        read_tensor(directory / "latents.f32").values,
        read_tensor(directory / "source_latents.f32").values,
        read_tensor(directory / "entropy.f32").values.astype(np.float64),
        frozenset(meta["layer_set"]),
    )


def write_entropy_csv(trace, path):
    header, rows = hs.entropy_rows(trace)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])
    atomic_write_bytes(path, buf.getvalue().encode())


def cmd_run(args, argv):
    cfg = load_run_config(args.config)
    trace, written, prior, origin, model = execute_run(cfg)
    out = Path(cfg["output_dir"])
    inputs = [args.config, cfg["mix"]] + ([cfg["prior"]] if "prior" in cfg else [])
    write_manifest(
        out / "manifest.json", argv, inputs, written,
        separator_origin=origin, prior_kind=prior.kind, config=cfg,
        model_fingerprint=model.fingerprint(),
    )
    print(f"edited {trace.steps} steps over layers {sorted(trace.layer_set)}; outputs in {out}")


def cmd_metrics(args, argv):
    if args.metric == "cqt-pcc":
        a = read_wav(args.a, mono=True)
        b = read_wav(args.b, mono=True)
        print(f"{metrics.cqt1_pcc(a, b):.6f}")
        return
    rows = metrics.composite_table(metrics.read_metric_table(args.table))
    print(metrics.format_table(rows))
    if args.out:
        atomic_write_bytes(args.out, metrics.table_csv(rows).encode())


def cmd_entropy(args, argv):
    trace = load_trace(args.trace)
    write_entropy_csv(trace, args.out)
    print(f"wrote {trace.steps} steps to {args.out}")


def cmd_replay(args, argv):
    manifest_path = Path(args.manifest)
    manifest = json.loads(manifest_path.read_text())
    manifest_path = manifest_path.resolve()
    previous = Path.cwd()
    os.chdir(manifest["cwd"])
    try:
        for path, digest in manifest["inputs"].items():
            if sha256_file(path) != digest:
                raise ValueError(f"input {path} changed since the manifest was written")
        code = main(manifest["argv"])
    finally:
        os.chdir(previous)
    if code:
        return code
    fresh = json.loads(manifest_path.read_text())
    mismatched = [p for p, d in manifest["outputs"].items() if fresh["outputs"].get(p) != d]
    if mismatched:
        print(f"output hashes differ: {mismatched}", file=sys.stderr)
        return EXIT_DATA
    print(f"reproduced {len(manifest['outputs'])} outputs with identical hashes")


def build_parser():
    parser = _Parser(prog="stemcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stemcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("separate", help="naive DSP four-stem separation")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--margin", type=float, default=HPSS_MARGIN)
    p.add_argument("--cutoff", type=float, default=BASS_CUTOFF)
    p.add_argument("--order", type=int, default=BASS_ORDER)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("prior", help="compute an acoustic prior for a target")
    p.add_argument("--mix", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--stems", help="directory with vocals/bass/drums/others.wav")
    p.add_argument("--kind", choices=KINDS, default="irm_mel")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("run", help="invert and edit with the synthetic harness")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="melodic consistency and balance composites")
    msub = p.add_subparsers(dest="metric", required=True, parser_class=_Parser)
    m = msub.add_parser("cqt-pcc")
    m.add_argument("a")
    m.add_argument("b")
    m = msub.add_parser("composite")
    m.add_argument("--table", required=True, help="CSV with method,clap,lpaps,cqt1_pcc columns")
    m.add_argument("--out", help="write the completed table as CSV")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("entropy", help="per-step attention entropy CSV from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("replay", help="re-run a manifest and verify output hashes")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args, argv) or 0
    except UsageError as exc:
        print(f"stemcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ContainerError, tomllib.TOMLDecodeError, KeyError) as exc:
        print(f"stemcal: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
