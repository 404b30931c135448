"""Render paper-style figures from siwave artifact directories.

Each figure kind reads only the documented artifact schemas (manifest,
delimited CSV payloads, report JSON) — no imports from the simulation
package. Rendering is read-only over the artifacts: outputs land in a
fresh subdirectory (or --out), written atomically so a failed job leaves
no partial files. Fixed style options give byte-identical vector output
across re-runs.

Command form:

    siwave-figures render <kind> <artifact-dir> [--format svg] [--dpi N]
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "siwave-figures"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["ArtifactError", "FigureJob", "FIGURE_KINDS", "render", "main"]

# figure kind -> experiment kinds whose artifact trees carry its inputs
FIGURE_KINDS = {
    "profiles": {"profile-sweep", "convergence-study"},
    "trajectory": {"effective-run", "quench-study", "convergence-study"},
    "quench-envelopes": {"quench-study", "convergence-study"},
    "convergence": {"convergence-study"},
    "field-heatmap": {"full-sim", "convergence-study"},
}

PROFILE_STYLE = {"f": dict(color="black", lw=1.4),
                 "s": dict(color="red", lw=1.4)}


class ArtifactError(Exception):
    """Missing, mismatched, or malformed artifacts."""


@dataclass(frozen=True)
class FigureJob:
    """One rendering request: artifact tree, figure kind, style options."""

    artifact_dir: Path
    kind: str
    fmt: str = "svg"
    dpi: int = 150
    out: Path | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ArtifactError(
                f"unknown figure kind '{self.kind}'; expected one of "
                + ", ".join(sorted(FIGURE_KINDS)))
        if self.fmt not in ("svg", "png"):
            raise ArtifactError(f"unsupported format '{self.fmt}'; "
                                f"choose svg or png")


# --------------------------------------------------------------------------
# artifact readers (documented schemas only)

def _load_json(path: Path) -> dict:
    if not path.is_file():
        raise ArtifactError(f"missing artifact: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: invalid JSON: {exc}")


def _load_csv(path: Path):
    """Columns by name plus the '# key = value' header comments."""
    if not path.is_file():
        raise ArtifactError(f"missing artifact: {path}")
    comments, n_comment_lines = {}, 0
    for line in path.read_text().splitlines():
        if not line.startswith("#"):
            break
        n_comment_lines += 1
        key, sep, value = line.lstrip("# ").partition(" = ")
        if sep:
            comments[key.strip()] = value.strip()
    try:
        data = np.genfromtxt(path, delimiter=",", names=True,
                             skip_header=n_comment_lines)
    except ValueError as exc:
        raise ArtifactError(f"{path}: malformed CSV: {exc}")
    if data.dtype.names is None:
        raise ArtifactError(f"{path}: no header row")
    return data, comments


def _require_columns(data, columns, path):
    missing = [c for c in columns if c not in data.dtype.names]
    if missing:
        raise ArtifactError(f"{path}: missing columns {missing}")


def _check_manifest(job: FigureJob) -> str:
    manifest = _load_json(job.artifact_dir / "manifest.json")
    kind = manifest.get("kind")
    allowed = FIGURE_KINDS[job.kind]
    if kind not in allowed:
        raise ArtifactError(
            f"{job.artifact_dir}: manifest kind '{kind}' does not provide "
            f"'{job.kind}' figures (expected one of {sorted(allowed)})")
    return kind


# --------------------------------------------------------------------------
# figure builders: return a list of (file stem, Figure)

def _fig_profiles(job: FigureJob):
    pdir = job.artifact_dir / "profiles"
    paths = sorted(pdir.glob("profile_R*.csv"))
    if not paths:
        raise ArtifactError(f"no profile CSVs under {pdir}")
    figures = []
    for path in paths:
        data, comments = _load_csv(path)
        _require_columns(data, ("x", "f", "s"), path)
        R = float(comments.get("R", "nan"))
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.plot(data["x"], data["f"], label="f", **PROFILE_STYLE["f"])
        ax.plot(data["x"], data["s"], label="s", **PROFILE_STYLE["s"])
        ax.axhline(0.0, color="0.75", lw=0.6, zorder=0)
        ax.set_xlabel("x")
        ax.set_title(f"R = {R:g}")
        ax.legend(loc="lower right")
        fig.tight_layout()
        figures.append((path.stem, fig))
    return figures


def _load_trajectory(job: FigureJob):
    path = job.artifact_dir / "trajectory.csv"
    data, comments = _load_csv(path)
    _require_columns(data, ("y0", "R", "Rp", "Rpp"), path)
    quench = float(comments.get("quench_time", "nan"))
    return data, quench


def _fig_trajectory(job: FigureJob):
    data, quench = _load_trajectory(job)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.6, 4.8), sharex=True)
    ax1.plot(data["y0"], data["R"], color="black", lw=1.4)
    ax1.set_ylabel("R")
    ax2.plot(data["y0"], data["Rp"], color="black", lw=1.2, label="R'")
    ax2.plot(data["y0"], data["Rpp"], color="0.5", lw=1.0, ls="--",
             label="R''")
    ax2.set_xlabel("y0")
    ax2.legend(loc="best")
    if np.isfinite(quench):
        for ax in (ax1, ax2):
            ax.axvline(quench, color="red", lw=0.9, ls=":")
        ax1.set_title(f"quench at y0 = {quench:.4g}")
    fig.tight_layout()
    return [("trajectory", fig)]


def _fig_quench_envelopes(job: FigureJob):
    data, _ = _load_trajectory(job)
    env = _load_json(job.artifact_dir / "envelopes.json")
    for key in ("hypothesis_ok", "c_hi", "c_lo", "R0"):
        if key not in env:
            raise ArtifactError(f"envelopes.json: missing key '{key}'")
    if not env["hypothesis_ok"] or env["c_hi"] is None:
        raise ArtifactError(
            "envelopes.json: bracket hypothesis not verified; no "
            "envelopes to draw")
    t = data["y0"]
    R0, c_hi, c_lo = env["R0"], env["c_hi"], env["c_lo"]

    def log_cosh(c):
        return np.logaddexp(c * t, -c * t) - np.log(2.0)

    lower = R0 - log_cosh(c_hi) / c_hi
    upper = R0 - log_cosh(c_lo) / c_lo

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.6, 4.8), sharex=True)
    ax1.fill_between(t, lower, upper, color="red", alpha=0.18, lw=0,
                     label="log-cosh envelopes")
    ax1.plot(t, lower, color="red", lw=0.8)
    ax1.plot(t, upper, color="red", lw=0.8)
    ax1.plot(t, data["R"], color="black", lw=1.4, label="R")
    if env.get("R_star") is not None:
        ax1.axhline(env["R_star"], color="0.6", lw=0.8, ls=":")
    ax1.set_ylabel("R")
    ax1.legend(loc="best")
    ax2.fill_between(t, -np.tanh(c_hi * t), -np.tanh(c_lo * t),
                     color="red", alpha=0.18, lw=0)
    ax2.plot(t, -np.tanh(c_hi * t), color="red", lw=0.8)
    ax2.plot(t, -np.tanh(c_lo * t), color="red", lw=0.8)
    ax2.plot(t, data["Rp"], color="black", lw=1.4)
    ax2.set_xlabel("y0")
    ax2.set_ylabel("R'")
    fig.tight_layout()
    return [("quench_envelopes", fig)]


def _fig_convergence(job: FigureJob):
    report = _load_json(job.artifact_dir / "error_report.json")
    slopes = report.get("slopes")
    if not slopes:
        raise ArtifactError("error_report.json: no fitted slopes")
    styles = {"L1H1": ("o-", "black"), "L1L2t": ("s-", "tab:blue"),
              "sup_l2": ("^-", "tab:green"),
              "L1H1_control": (".--", "red")}
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for name in sorted(slopes):
        fit = slopes[name]
        values = np.asarray(fit["values"], dtype=float)
        if name not in styles or not np.all(values > 0):
            continue
        marker, color = styles[name]
        ax.loglog(fit["epsilons"], values, marker, color=color, ms=4,
                  lw=1.2, label=f"{name}: slope {fit['slope']:.2f}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("error norm")
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    ax.legend(fontsize=8)
    excluded = report.get("excluded") or []
    if excluded:
        ax.set_title(f"{len(excluded)} arm(s) excluded")
    fig.tight_layout()
    return [("convergence", fig)]


def _fig_field_heatmap(job: FigureJob):
    fdir = job.artifact_dir / "fields"
    manifest = _load_json(fdir / "manifest.json")
    for key in ("snapshot_files", "snapshot_times"):
        if key not in manifest:
            raise ArtifactError(f"{fdir}/manifest.json: missing '{key}'")
    times = np.asarray(manifest["snapshot_times"], dtype=float)
    phi, sigma, r = [], [], None
    for name in manifest["snapshot_files"]:
        data, _ = _load_csv(fdir / name)
        _require_columns(data, ("r", "phi", "sigma"), fdir / name)
        r = data["r"]
        phi.append(data["phi"])
        sigma.append(data["sigma"])
    phi, sigma = np.array(phi), np.array(sigma)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.2, 3.6), sharey=True)
    m1 = ax1.pcolormesh(r, times, phi, cmap="RdBu_r", vmin=-1.0, vmax=1.0,
                        shading="nearest")
    fig.colorbar(m1, ax=ax1, label="phi")
    amp = max(float(np.abs(sigma).max()), 1e-30)
    m2 = ax2.pcolormesh(r, times, sigma, cmap="PuOr", vmin=-amp, vmax=amp,
                        shading="nearest")
    fig.colorbar(m2, ax=ax2, label="sigma")
    ax1.set_xlabel("r")
    ax2.set_xlabel("r")
    ax1.set_ylabel("t")
    fig.tight_layout()
    return [("field_heatmap", fig)]


_BUILDERS = {
    "profiles": _fig_profiles,
    "trajectory": _fig_trajectory,
    "quench-envelopes": _fig_quench_envelopes,
    "convergence": _fig_convergence,
    "field-heatmap": _fig_field_heatmap,
}


# --------------------------------------------------------------------------
# rendering

def render(job: FigureJob) -> list[Path]:
    """Render one figure job; returns the written files.

    All inputs are validated and every figure is drawn before anything is
    written, then the files move into place together — a failure leaves
    no partial output.
    """
    _check_manifest(job)
    figures = _fig_done = None
    try:
        figures = _BUILDERS[job.kind](job)
        outdir = job.out if job.out is not None \
            else job.artifact_dir / "render" / job.kind
        outdir.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=outdir))
        try:
            staged = []
            for stem, fig in figures:
                path = tmp / f"{stem}.{job.fmt}"
                meta = {"Date": None} if job.fmt == "svg" else None
                fig.savefig(path, format=job.fmt, dpi=job.dpi,
                            metadata=meta)
                staged.append(path)
            written = []
            for path in staged:
                target = outdir / path.name
                os.replace(path, target)
                written.append(target)
            _fig_done = written
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
    finally:
        if figures:
            for _, fig in figures:
                plt.close(fig)
    return _fig_done


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="siwave-figures",
        description="Paper-style figures from siwave artifact trees.")
    sub = parser.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("render", help="render one figure kind")
    rp.add_argument("kind", choices=sorted(FIGURE_KINDS),
                    help="figure kind to render")
    rp.add_argument("artifact_dir", type=Path,
                    help="experiment artifact directory")
    rp.add_argument("--format", dest="fmt", default="svg",
                    choices=("svg", "png"), help="output format")
    rp.add_argument("--dpi", type=int, default=150,
                    help="raster resolution (png)")
    rp.add_argument("--out", type=Path, default=None,
                    help="output directory (default: "
                         "<artifact-dir>/render/<kind>)")
    args = parser.parse_args(argv)
    try:
        job = FigureJob(artifact_dir=args.artifact_dir, kind=args.kind,
                        fmt=args.fmt, dpi=args.dpi, out=args.out)
        written = render(job)
    except ArtifactError as exc:
        print(f"siwave-figures: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
