"""Render solver output directories into publication-style figures.

Consumes only the documented flat-file outputs of a run (history.csv,
result.json, q.csv, psi.csv); no in-process coupling to the solver. Four
figure kinds:

  reconstruction  stems of the recovered atoms (Diracs red, dipole endpoints
                  blue) with the reference atoms in green and measurement
                  markers
  residual        approximate residual per iteration on a log axis
  certificate1d   rescaled dual variable with the +-1 guide lines and Dirac
                  location markers
  psi2d           heatmap of the pair surface with dipole markers
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("reconstruction", "residual", "certificate1d", "psi2d")
_SAVE_OPTS = {"dpi": 150, "format": "png"}


class RenderInputError(ValueError):
    """Missing or malformed input file, with file context in the message."""


@dataclass(frozen=True)
class PlotSpec:
    result_dir: Path
    kind: str
    output: Path

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderInputError(f"unknown figure kind {self.kind!r}")


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise RenderInputError(f"{path}: input file not found")
    try:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise RenderInputError(f"{path}: {exc}") from exc
    if not rows:
        return []
    return rows


def _read_result(result_dir: Path) -> dict:
    path = result_dir / "result.json"
    if not path.exists():
        raise RenderInputError(f"{path}: input file not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RenderInputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc


def _new_axes():
    fig, ax = plt.subplots(figsize=(7.0, 3.6), constrained_layout=True)
    return fig, ax


def _render_reconstruction(spec: PlotSpec) -> None:
    result = _read_result(spec.result_dir)
    fig, ax = _new_axes()

    def stem(xs, ws, color, label):
        first = True
        for x, w in zip(xs, ws):
            ax.plot([x, x], [0.0, w], color=color, lw=1.4,
                    label=label if first else None)
            ax.plot([x], [w], marker="o", ms=3.5, color=color)
            first = False

    diracs_x, diracs_w, dip_x, dip_w = [], [], [], []
    for atom in result["atoms"]:
        if atom["type"] == "dirac":
            diracs_x.append(atom["z"][0])
            diracs_w.append(atom["sign"] * atom["weight"])
        else:
            scale = atom["weight"]
            dip_x.extend([atom["x"][0], atom["y"][0]])
            dip_w.extend([scale, -scale])
    stem(diracs_x, diracs_w, "tab:red", "Dirac atoms")
    stem(dip_x, dip_w, "tab:blue", "dipole endpoints")

    ref = result["config"].get("reference_measure", [])
    stem([a["x"][0] for a in ref], [a["w"] for a in ref], "tab:green", "reference")

    obs = result.get("observations", {})
    if obs.get("kind") == "sensor":
        ax.plot(obs["nodes"], np.abs(obs["K_mu"]), "x", color="black", ms=5,
                label="|measurement of recovered atoms|")
    elif obs.get("kind") == "field":
        ax.plot(obs["nodes"], obs["K_mu"], color="black", lw=0.8,
                label="measurement of recovered atoms")
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.set_xlabel("location")
    ax.set_ylabel("mass / measurement")
    ax.legend(loc="best", fontsize=8)
    fig.savefig(spec.output, **_SAVE_OPTS)
    plt.close(fig)


def _render_residual(spec: PlotSpec) -> None:
    rows = _read_csv(spec.result_dir / "history.csv")
    fig, ax = _new_axes()
    ks = [int(r["k"]) for r in rows]
    rh = [float(r["r_hat"]) for r in rows]
    pts = [(k, r) for k, r in zip(ks, rh) if r > 0]
    if pts:
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts],
                    marker=".", lw=1.0, color="tab:blue")
        ax.set_ylabel("approximate residual")
    else:
        ax.annotate("no data", xy=(0.5, 0.5), xycoords="axes fraction",
                    ha="center", va="center", fontsize=14, color="gray")
    ax.set_xlabel("iteration")
    fig.savefig(spec.output, **_SAVE_OPTS)
    plt.close(fig)


def _render_certificate1d(spec: PlotSpec) -> None:
    rows = _read_csv(spec.result_dir / "q.csv")
    if not rows:
        raise RenderInputError(f"{spec.result_dir / 'q.csv'}: no samples")
    result = _read_result(spec.result_dir)
    z = np.array([float(r["z"]) for r in rows])
    q = np.array([float(r["q_over_alpha"]) for r in rows])
    fig, ax = _new_axes()
    ax.plot(z, q, color="tab:blue", lw=1.2)
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.axhline(-1.0, color="gray", lw=0.8, ls="--")
    for atom in result["atoms"]:
        if atom["type"] == "dirac":
            ax.axvline(atom["z"][0], color="tab:red", lw=0.6, ls=":")
    ax.set_xlabel("location")
    ax.set_ylabel("rescaled dual variable")
    fig.savefig(spec.output, **_SAVE_OPTS)
    plt.close(fig)


def _render_psi2d(spec: PlotSpec) -> None:
    rows = _read_csv(spec.result_dir / "psi.csv")
    if not rows:
        raise RenderInputError(f"{spec.result_dir / 'psi.csv'}: no samples")
    result = _read_result(spec.result_dir)
    xs = np.array([float(r["x"]) for r in rows])
    ys = np.array([float(r["y"]) for r in rows])
    vs = np.array([float(r["psi"]) for r in rows])
    n = int(round(np.sqrt(len(rows))))
    if n * n != len(rows):
        raise RenderInputError(f"{spec.result_dir / 'psi.csv'}: expected a square grid")
    grid = vs.reshape(n, n)
    fig, ax = _new_axes()
    im = ax.imshow(
        grid.T,
        origin="lower",
        extent=(xs.min(), xs.max(), ys.min(), ys.max()),
        aspect="auto",
        cmap="RdBu_r",
        vmin=-1.05,
        vmax=1.05,
    )
    fig.colorbar(im, ax=ax, label="pair surface")
    for atom in result["atoms"]:
        if atom["type"] == "dipole":
            ax.plot([atom["x"][0]], [atom["y"][0]], marker="o", ms=5,
                    mfc="none", mec="black")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(spec.output, **_SAVE_OPTS)
    plt.close(fig)


_RENDERERS = {
    "reconstruction": _render_reconstruction,
    "residual": _render_residual,
    "certificate1d": _render_certificate1d,
    "psi2d": _render_psi2d,
}


def render(spec: PlotSpec) -> Path:
    """Render one figure; returns the output path."""
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    _RENDERERS[spec.kind](spec)
    return spec.output


def render_all(result_dir: Path, out_dir: Path) -> list[Path]:
    return [
        render(PlotSpec(result_dir=result_dir, kind=kind, output=out_dir / f"{kind}.png"))
        for kind in FIGURE_KINDS
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_figures", description="render figures from a solver output directory"
    )
    parser.add_argument("result_dir")
    parser.add_argument("--out", default=None, help="image output directory (default: result dir)")
    parser.add_argument(
        "--kind", choices=FIGURE_KINDS, default=None, help="render a single figure kind"
    )
    args = parser.parse_args(argv)
    result_dir = Path(args.result_dir)
    out_dir = Path(args.out) if args.out else result_dir
    try:
        if args.kind:
            paths = [render(PlotSpec(result_dir=result_dir, kind=args.kind,
                                     output=out_dir / f"{args.kind}.png"))]
        else:
            paths = render_all(result_dir, out_dir)
    except RenderInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
