"""Command-line interface.

Data goes to files or stdout; diagnostics go to stderr as key=value lines.
Exit codes: 0 success, 1 runtime error (with a single machine-parseable
``error code=<Name> message="..."`` record on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analyzer, fileio, packing
from . import scheduler as cac
from .errors import PromptQuantError
from .harness import MethodConfig, TaskConfig, TrainReport, build_task, train
from .quantizer import WeightTensor, fit_codebook, normalized_quant_error, quant_error, quantize


def _diag(args, **kv) -> None:
    if args.verbose:
        for k, v in kv.items():
            print(f"{k}={v}", file=sys.stderr)


def _fmt(x: float, spec: str = ".10g") -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return format(x, spec)


# ---------------------------------------------------------------------------
# quantize / dequantize
# ---------------------------------------------------------------------------

def cmd_quantize(args) -> int:
    w = fileio.read_weights(args.infile, args.format)
    cb = fit_codebook(
        w, args.bits, max_iter=args.max_iter, tol=args.tol, seed=args.seed, jitter=args.jitter
    )
    a = quantize(w, cb)
    blob = packing.serialize(cb, a.indices)
    Path(args.out).write_bytes(blob)
    if args.codebook_out:
        fileio.write_codebook(Path(args.codebook_out), cb, n=w.count)
    _diag(
        args,
        n=w.count,
        bits=args.bits,
        mu=cb.stats.mu,
        sigma=cb.stats.sigma,
        quant_error_raw=quant_error(w, a),
        quant_error_normalized=normalized_quant_error(w, a, cb.stats),
        storage_bits=packing.storage_bits(w.count, args.bits),
        blob_bytes=len(blob),
    )
    return 0


def cmd_dequantize(args) -> int:
    cb, idx = packing.deserialize(Path(args.infile).read_bytes())
    recon = cb.stats.sigma * cb.centers[idx] + cb.stats.mu
    fileio.write_weights(Path(args.out), WeightTensor(recon), args.format)
    _diag(args, n=idx.size, bits=cb.bits, mu=cb.stats.mu, sigma=cb.stats.sigma)
    return 0


# ---------------------------------------------------------------------------
# pack / unpack / inspect / storage
# ---------------------------------------------------------------------------

def _read_indices(path: Path) -> np.ndarray:
    return np.array([int(line) for line in Path(path).read_text().split()], dtype=np.int64)


def cmd_pack(args) -> int:
    cb = fileio.read_codebook(Path(args.codebook))
    idx = _read_indices(Path(args.indices))
    Path(args.out).write_bytes(packing.serialize(cb, idx))
    return 0


def cmd_unpack(args) -> int:
    cb, idx = packing.deserialize(Path(args.infile).read_bytes())
    if args.indices_out:
        Path(args.indices_out).write_text("\n".join(str(i) for i in idx) + "\n")
    else:
        sys.stdout.write("\n".join(str(i) for i in idx) + "\n")
    if args.codebook_out:
        fileio.write_codebook(Path(args.codebook_out), cb, n=idx.size)
    return 0


def cmd_inspect(args) -> int:
    raw = Path(args.infile).read_bytes()
    cb, idx = packing.deserialize(raw)
    n = idx.size
    rec = {
        "magic": packing.MAGIC.decode(),
        "version": packing.VERSION,
        "bits": cb.bits,
        "count": n,
        "mu": cb.stats.mu,
        "sigma": cb.stats.sigma,
        "centers": cb.centers,
        "header_bytes": packing.HEADER_BYTES,
        "codebook_bytes": 2 * cb.centers.size,
        "payload_bytes": packing.payload_bytes(n, cb.bits),
        "file_bytes": len(raw),
        "storage_bits": packing.storage_bits(n, cb.bits) if n >= 1 else 0,
        "compression_ratio": packing.compression_ratio(n, cb.bits) if n >= 1 else 0.0,
    }
    for k, v in rec.items():
        print(f"{k}={fileio.format_value(v)}")
    return 0


def cmd_storage(args) -> int:
    bits = packing.storage_bits(args.n, args.bits)
    nbytes = (bits + 7) // 8
    print(f"{bits} bits ({nbytes} bytes)")
    _diag(
        args,
        baseline_bits=16 * args.n,
        compression_ratio=packing.compression_ratio(args.n, args.bits),
    )
    return 0


# ---------------------------------------------------------------------------
# kl / cac-init / cac-step  (scripting surface for external bindings)
# ---------------------------------------------------------------------------

def _parse_probs(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",") if x], dtype=np.float64)


def cmd_kl(args) -> int:
    value = cac.kl_divergence(_parse_probs(args.p), _parse_probs(args.q), eps=args.eps)
    print(format(value, ".17g"))
    return 0


def _state_records(state: cac.CACState) -> dict[str, object]:
    return {
        "p_old": state.p_old,
        "steps_since": state.steps_since,
        "t_min": state.t_min,
        "kl_threshold": state.kl_threshold,
        "error_gate": int(state.error_gate),
        "last_error": state.last_error,
    }


def _read_state(path: Path) -> cac.CACState:
    rec = fileio.read_records(path)
    return cac.CACState(
        p_old=_parse_probs(rec["p_old"]),
        steps_since=int(rec["steps_since"]),
        t_min=int(rec["t_min"]),
        kl_threshold=float(rec["kl_threshold"]),
        error_gate=bool(int(rec["error_gate"])),
        last_error=float(rec["last_error"]),
    )


def cmd_cac_init(args) -> int:
    w = fileio.read_weights(args.infile, args.format)
    cb = fileio.read_codebook(Path(args.codebook))
    state = cac.initial_state(
        w,
        cb,
        t_min=args.cac_interval,
        kl_threshold=args.cac_threshold,
        error_gate=args.cac_error_gate,
    )
    fileio.write_records(Path(args.state), _state_records(state))
    return 0


def cmd_cac_step(args) -> int:
    state = _read_state(Path(args.state))
    w = fileio.read_weights(args.infile, args.format)
    cb = fileio.read_codebook(Path(args.codebook))
    decision, new_state, new_cb = cac.step(state, w, cb)
    fileio.write_records(Path(args.state), _state_records(new_state))
    if decision.recluster:
        fileio.write_codebook(Path(args.codebook), new_cb, n=w.count)
    print(f"recluster={int(decision.recluster)}")
    print(f"reason={decision.reason.value}")
    print(f"kl={_fmt(decision.kl, '.17g') if decision.kl is not None else ''}")
    print(f"error_now={_fmt(decision.error_now, '.17g') if decision.error_now is not None else ''}")
    return 0


# ---------------------------------------------------------------------------
# train-toy
# ---------------------------------------------------------------------------

def _run_seed(payload):
    task_cfg, method, seed = payload
    task = build_task(task_cfg)
    return train(task, replace(method, seed=seed))


def cmd_train_toy(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s]
    task_cfg = TaskConfig(
        dim=args.dim,
        n_base=args.n_base,
        n_new=args.n_new,
        prompt_dim=args.prompt_dim,
        samples_per_class=args.samples_per_class,
        sample_noise=args.sample_noise,
        seed=args.task_seed,
    )
    method = MethodConfig(
        mode=args.mode,
        bits=args.bits,
        noise_std=args.noise_std,
        epochs=args.epochs,
        lr=args.lr,
        batch=args.batch,
        tau=args.tau,
        cac_interval=args.cac_interval,
        cac_threshold=args.cac_threshold,
        cac_error_gate=args.cac_error_gate,
    )
    payloads = [(task_cfg, method, s) for s in seeds]
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_run_seed, payloads))
    else:
        reports = [_run_seed(p) for p in payloads]

    out = Path(args.out)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["seed", "epoch", "base_acc", "new_acc", "h_mean", "quant_err", "kld", "reclusters_cum"]
        )
        for r in reports:
            for i, epoch in enumerate(r.epochs):
                done = sum(1 for s in r.recluster_steps if s < (epoch + 1) * r.steps_per_epoch)
                writer.writerow(
                    [
                        r.seed,
                        epoch,
                        _fmt(r.base_acc[i], ".6f"),
                        _fmt(r.new_acc[i], ".6f"),
                        _fmt(r.h_mean[i], ".6f"),
                        _fmt(r.quant_err[i]),
                        _fmt(r.kld[i]),
                        done,
                    ]
                )

    if args.snapshot_dir:
        snap_dir = Path(args.snapshot_dir)
        snap_dir.mkdir(parents=True, exist_ok=True)
        for r in reports:
            for i, snap in enumerate(r.snapshots):
                fileio.write_f32(snap_dir / f"seed{r.seed}_epoch{i:04d}.f32", snap)

    if not args.no_figs:
        from . import figures

        figures.training_curves(reports, out.with_suffix(""))

    final_base = float(np.mean([r.base_acc[-1] for r in reports]))
    final_new = float(np.mean([r.new_acc[-1] for r in reports]))
    _diag(
        args,
        mode=args.mode,
        seeds=args.seeds,
        mean_final_base_acc=f"{final_base:.6f}",
        mean_final_new_acc=f"{final_new:.6f}",
        total_reclusters=sum(len(r.recluster_steps) for r in reports),
    )
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    tensors = [fileio.read_weights(Path(p), args.format) for p in args.snapshots]
    if args.labels:
        labels = [int(x) for x in args.labels.split(",") if x]
    else:
        labels = list(range(len(tensors)))
    series = analyzer.SnapshotSeries(snapshots=tensors, labels=labels)

    variances = analyzer.variance_trend(series)
    codebook = fileio.read_codebook(Path(args.codebook)) if args.codebook else None
    klds = (
        analyzer.epoch_kld_trend(series, bins=args.bins, codebook=codebook)
        if len(tensors) >= 2
        else np.zeros(0)
    )
    outliers = np.array([analyzer.outlier_stats(t, args.outlier_k)[1] for t in tensors])

    out = Path(args.out)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "variance", "kld", "outlier_fraction"])
        for i, label in enumerate(labels):
            kld = _fmt(float(klds[i - 1])) if i > 0 else ""
            writer.writerow([label, _fmt(float(variances[i])), kld, _fmt(float(outliers[i]))])

    lo = min(float(t.values.min()) for t in tensors)
    hi = max(float(t.values.max()) for t in tensors)
    if lo == hi:
        hi = lo + 1.0
    all_counts = []
    edges = None
    for t in tensors:
        counts, edges = analyzer.histogram(t, args.hist_bins, (lo, hi))
        all_counts.append(counts)
    hist_path = Path(args.hist_out) if args.hist_out else out.with_name(out.stem + "_hist.csv")
    with hist_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "bin_lo", "bin_hi", "count"])
        for label, counts in zip(labels, all_counts):
            for b in range(len(counts)):
                writer.writerow([label, _fmt(float(edges[b])), _fmt(float(edges[b + 1])), int(counts[b])])

    if not args.no_figs:
        from . import figures

        figures.analysis_figures(labels, variances, klds, outliers, out.with_suffix(""))
        figures.histogram_figure(edges, all_counts, labels, out.with_suffix(""))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptquant",
        description="Codebook quantization toolkit for small tunable tensors.",
    )
    parser.add_argument("--verbose", action="store_true", help="diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_fmt(p):
        p.add_argument("--format", default="auto", choices=["auto", "f32", "text"])

    p = sub.add_parser("quantize", help="fit a codebook and write a packed blob")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, required=True, choices=[1, 2, 4, 8])
    add_fmt(p)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--codebook-out", default=None)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct weights from a blob")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    add_fmt(p)
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("pack", help="assemble a blob from an index list and codebook record")
    p.add_argument("--indices", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="split a blob into indices and codebook record")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--indices-out", default=None)
    p.add_argument("--codebook-out", default=None)
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("inspect", help="print blob header and storage accounting")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("storage", help="print the bit cost of b-bit storage for n weights")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--bits", type=int, required=True, choices=[1, 2, 4, 8])
    p.set_defaults(func=cmd_storage)

    p = sub.add_parser("kl", help="KL divergence between two probability vectors")
    p.add_argument("--p", required=True, help="comma-separated current distribution")
    p.add_argument("--q", required=True, help="comma-separated cached distribution")
    p.add_argument("--eps", type=float, default=cac.KL_EPS)
    p.set_defaults(func=cmd_kl)

    p = sub.add_parser("cac-init", help="create a re-clustering scheduler state file")
    p.add_argument("--in", dest="infile", required=True)
    add_fmt(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--cac-interval", type=int, default=cac.DEFAULT_INTERVAL)
    p.add_argument("--cac-threshold", type=float, default=cac.DEFAULT_KL_THRESHOLD)
    p.add_argument("--cac-error-gate", action="store_true")
    p.set_defaults(func=cmd_cac_init)

    p = sub.add_parser("cac-step", help="advance the scheduler one step (updates files in place)")
    p.add_argument("--in", dest="infile", required=True)
    add_fmt(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--state", required=True)
    p.set_defaults(func=cmd_cac_step)

    p = sub.add_parser("train-toy", help="run the synthetic prompt-tuning harness")
    p.add_argument("--mode", required=True, choices=["baseline", "noise", "qat", "ptq"])
    p.add_argument("--bits", type=int, default=1, choices=[1, 2, 4, 8])
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=MethodConfig.lr)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--tau", type=float, default=MethodConfig.tau)
    p.add_argument("--dim", type=int, default=TaskConfig.dim)
    p.add_argument("--n-base", type=int, default=TaskConfig.n_base)
    p.add_argument("--n-new", type=int, default=TaskConfig.n_new)
    p.add_argument("--prompt-dim", type=int, default=TaskConfig.prompt_dim)
    p.add_argument("--samples-per-class", type=int, default=TaskConfig.samples_per_class)
    p.add_argument("--sample-noise", type=float, default=TaskConfig.sample_noise)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--cac-interval", type=int, default=cac.DEFAULT_INTERVAL)
    p.add_argument("--cac-threshold", type=float, default=cac.DEFAULT_KL_THRESHOLD)
    p.add_argument("--cac-error-gate", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--snapshot-dir", default=None)
    p.add_argument("--no-figs", action="store_true")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("analyze", help="distribution diagnostics over snapshot files")
    p.add_argument("snapshots", nargs="+")
    add_fmt(p)
    p.add_argument("--labels", default=None, help="comma-separated integer labels")
    p.add_argument("--bins", type=int, default=analyzer.DEFAULT_KLD_BINS)
    p.add_argument("--hist-bins", type=int, default=64)
    p.add_argument("--outlier-k", type=float, default=3.0)
    p.add_argument("--codebook", default=None, help="use this codebook's index event space for KLD")
    p.add_argument("--out", required=True)
    p.add_argument("--hist-out", default=None)
    p.add_argument("--no-figs", action="store_true")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PromptQuantError as exc:
        print(f'error code={exc.code} message="{exc}"', file=sys.stderr)
        return 1
    except OSError as exc:
        print(f'error code=IOError message="{exc}"', file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
