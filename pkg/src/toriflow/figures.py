"""Report figures rendered next to the delimited outputs.

Every report-producing command can drop a PNG beside its text artifact:
family observable panels for the index, configuration-space generator
curves for single-record reports, and a wireframe for surface exports.
The Agg backend keeps this headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def family_figure(records, path) -> str:
    """Observable panels (Calabi, multiplier, distances, T) along a family."""
    h = np.array([r.h for r in records])
    obs = [r.observables for r in records]

    def col(key):
        return np.array([o.get(key, np.nan) for o in obs])

    fig, axes = plt.subplots(2, 2, figsize=(9, 7), sharex=True)
    ax = axes[0, 0]
    ax.plot(h, col("C1"), ".-", ms=3, label="C1")
    ax.plot(h, col("C2"), ".-", ms=3, label="C2")
    ax.set_ylabel("Calabi invariant")
    ax.legend(fontsize=8)
    ax = axes[0, 1]
    ax.plot(h, col("multiplier_unstable"), ".-", ms=3)
    ax.set_ylabel("unstable multiplier")
    ax = axes[1, 0]
    for key, label in (("d_tangent_flow", "d(TK,X)"),
                       ("d_stable_unstable", "d(Es,Eu)"),
                       ("d_stable_center", "d(Es,Ec)"),
                       ("d_unstable_center", "d(Eu,Ec)")):
        ax.plot(h, col(key), ".-", ms=3, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("energy h")
    ax.set_ylabel("bundle distances")
    ax.legend(fontsize=8)
    ax = axes[1, 1]
    ax.plot(h, [r.T for r in records], ".-", ms=3)
    ax.set_xlabel("energy h")
    ax.set_ylabel("flying time T")
    fig.suptitle(f"family {records[0].family}  (omega = {records[0].omega:.6f})")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def generator_figure(record, path) -> str:
    """Configuration-space view of the generator legs of one record."""
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    for i, leg in enumerate(record.K):
        x = np.concatenate([leg[0], leg[0][:1]])
        y = np.concatenate([leg[1], leg[1][:1]])
        z = np.concatenate([leg[2], leg[2][:1]])
        ax.plot(x, y, z, lw=0.9, label=f"K_{i}" if i < 4 else None)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_zlabel("x3")
    ax.set_title(f"torus {record.seq}: T={record.T:.6f}, h={record.h:.6f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def surface_figure(surface, path, stride: int = 4) -> str:
    """Wireframe of a globalized torus with its two homotopy generators."""
    pts = surface.points
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    n1, n2 = pts.shape[:2]
    wrap = np.concatenate([pts, pts[:1]], axis=0)
    wrap = np.concatenate([wrap, wrap[:, :1]], axis=1)
    for i in range(0, n1, stride):
        ax.plot(wrap[i, :, 0], wrap[i, :, 1], wrap[i, :, 2], "k-", lw=0.3)
    for j in range(0, n2, stride):
        ax.plot(wrap[:, j, 0], wrap[:, j, 1], wrap[:, j, 2], "k-", lw=0.3)
    g1, g2 = surface.generator1, surface.generator2
    ax.plot(np.append(g1[:, 0], g1[0, 0]), np.append(g1[:, 1], g1[0, 1]),
            np.append(g1[:, 2], g1[0, 2]), "b-", lw=1.5, label="generator 1")
    ax.plot(np.append(g2[:, 0], g2[0, 0]), np.append(g2[:, 1], g2[0, 1]),
            np.append(g2[:, 2], g2[0, 2]), "r-", lw=1.5, label="generator 2")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_zlabel("x3")
    meta = surface.state_meta
    ax.set_title(f"T={meta['T']:.6f}, omega={meta['omega']:.6f}, h={meta['h']:.6f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)
