"""Arrow-grid pictures of option policies on grid environments.

Each panel shows one option (plus the rho-weighted mixture when there are
several): in every cell an arrow points along the most likely action and
its length is that action's probability, a full-length arrow reaching
the cell border.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import StateBatch
from ..envs import DIRS, NOOP, Compass, HierarchicalMaze, ProcMaze

CELL = 24


@dataclass
class GridReport:
    labels: list[str]
    modal: np.ndarray   # (P, H, W) modal action, -1 where not shown
    prob: np.ndarray    # (P, H, W) its probability
    shown: np.ndarray   # (H, W) bool
    overlay: dict = field(default_factory=dict)
    svg: str = ""

    def purity(self) -> list[tuple[int, float]]:
        """Per panel: the most common modal action and the share of shown cells using it."""
        out = []
        for m in self.modal:
            counts = np.bincount(m[self.shown], minlength=len(DIRS))
            best = int(np.argmax(counts))
            out.append((best, float(counts[best] / self.shown.sum())))
        return out


def grid_states(env, context: StateBatch | None = None, rng=None):
    """States that vary the agent (or controller) cell with everything else fixed.

    Returns ``(states, cells, shown, overlay)`` where ``cells`` lists the
    ``(row, col)`` of each state and ``shown`` marks drawable cells.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if isinstance(env, Compass):
        w = env.width
        cells = np.array([(r, c) for r in range(w) for c in range(w)], dtype=np.int64)
        states = StateBatch(pos=cells, edge=np.zeros(len(cells), np.int64), terminal=np.zeros(len(cells), bool))
        shown = np.zeros((w, w), bool)
        shown[1:-1, 1:-1] = True
        return states, cells, shown, {"terminal": ~shown}
    if isinstance(env, HierarchicalMaze):
        base = env.base.reset_batch(1, rng) if context is None else context.take([0])
        c = env.cw
        cells = np.array([(r, k) for r in range(c) for k in range(c)], dtype=np.int64)
        states = env.wrap(base.repeat(len(cells)), cells)
        return states, cells, np.ones((c, c), bool), {"buttons": env.button_map >= 0}
    if isinstance(env, ProcMaze):
        ctx = env.reset_batch(1, rng) if context is None else context.take([0])
        w = env.width
        goal = tuple(ctx.goal[0])
        cells = np.array([(r, c) for r in range(w) for c in range(w) if (r, c) != goal], dtype=np.int64)
        states = ctx.repeat(len(cells)).replace(agent=cells)
        shown = np.ones((w, w), bool)
        shown[goal] = False
        goal_mask = np.zeros((w, w), bool)
        goal_mask[goal] = True
        return states, cells, shown, {"walls": ctx.walls[0].copy(), "goal": goal_mask}
    raise TypeError(f"no grid layout for {type(env).__name__}")


def render_option_grids(policy, env, fixed_context: StateBatch | None = None, rng=None) -> GridReport:
    """Modal action and its probability per cell for every option.

    ``policy`` needs ``forward_policy(obs) -> (log pi (B,N,A), log rho (B,N))``.
    """
    states, cells, shown, overlay = grid_states(env, fixed_context, rng)
    logp, log_rho = policy.forward_policy(env.encode(states))
    p = np.exp(np.asarray(logp, dtype=np.float64))
    panels = [p[:, n] for n in range(p.shape[1])]
    labels = [f"option {n}" for n in range(p.shape[1])]
    if p.shape[1] > 1:
        panels.append(np.einsum("bn,bna->ba", np.exp(np.asarray(log_rho, dtype=np.float64)), p))
        labels.append("mixture")
    H, W = shown.shape
    modal = np.full((len(panels), H, W), -1, dtype=np.int64)
    prob = np.zeros((len(panels), H, W))
    for i, panel in enumerate(panels):
        modal[i, cells[:, 0], cells[:, 1]] = panel.argmax(axis=1)
        prob[i, cells[:, 0], cells[:, 1]] = panel.max(axis=1)
    modal[:, ~shown] = -1
    prob[:, ~shown] = 0.0
    report = GridReport(labels, modal, prob, shown, overlay)
    report.svg = grids_svg(report)
    return report


def grids_svg(report: GridReport) -> str:
    P, H, W = report.modal.shape
    gap, top = CELL, 20
    width = P * W * CELL + (P - 1) * gap + 2
    height = H * CELL + top + 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#1b7f3b"/></marker></defs>',
    ]
    fills = {"terminal": "#dddddd", "walls": "#555555", "goal": "#f2c84b"}
    for i in range(P):
        x0 = 1 + i * (W * CELL + gap)
        parts.append(f'<text x="{x0}" y="14" font-size="12" font-family="sans-serif">{report.labels[i]}</text>')
        for r in range(H):
            for c in range(W):
                x, y = x0 + c * CELL, top + r * CELL
                fill = "#ffffff"
                for key, colour in fills.items():
                    if key in report.overlay and report.overlay[key][r, c]:
                        fill = colour
                stroke = 'stroke="#000" stroke-width="2.5"' if report.overlay.get("buttons", np.zeros((H, W), bool))[r, c] \
                    else 'stroke="#bbbbbb" stroke-width="0.5"'
                parts.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" {stroke}/>')
                a = report.modal[i, r, c]
                if a < 0:
                    continue
                cx, cy = x + CELL / 2, y + CELL / 2
                length = report.prob[i, r, c] * CELL / 2
                if a == NOOP:
                    parts.append(f'<circle cx="{cx}" cy="{cy}" r="{max(length / 2, 1):.2f}" fill="#1b7f3b"/>')
                    continue
                dr, dc = DIRS[a]
                parts.append(
                    f'<line x1="{cx}" y1="{cy}" x2="{cx + dc * length:.2f}" y2="{cy + dr * length:.2f}" '
                    'stroke="#1b7f3b" stroke-width="1.5" marker-end="url(#head)"/>'
                )
    parts.append("</svg>")
    return "\n".join(parts)
