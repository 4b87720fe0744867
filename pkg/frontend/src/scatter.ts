/** Embedding scatter view: cluster coloring and lasso selection. */

import type { ScatterPoint } from './types'

export interface ScatterView {
  points: ScatterPoint[]
  colors: Map<number, string>
  bounds: { minX: number; maxX: number; minY: number; maxY: number }
}

const PALETTE = [
  '#4269d0', '#efb118', '#ff725c', '#6cc5b0', '#3ca951',
  '#ff8ab7', '#a463f2', '#97bbf5', '#9c6b4e', '#9498a0',
]

export function buildScatterView(points: ScatterPoint[]): ScatterView {
  const clusters = [...new Set(points.map((p) => p.cluster))].sort((a, b) => a - b)
  const colors = new Map(clusters.map((c, i) => [c, PALETTE[i % PALETTE.length]]))
  const xs = points.map((p) => p.x)
  const ys = points.map((p) => p.y)
  return {
    points,
    colors,
    bounds: {
      minX: Math.min(...xs),
      maxX: Math.max(...xs),
      minY: Math.min(...ys),
      maxY: Math.max(...ys),
    },
  }
}

/** Points inside a rectangular lasso, for filtering the gallery. */
export function lassoSelect(
  view: ScatterView,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
): ScatterPoint[] {
  const [lox, hix] = x0 <= x1 ? [x0, x1] : [x1, x0]
  const [loy, hiy] = y0 <= y1 ? [y0, y1] : [y1, y0]
  return view.points.filter((p) => p.x >= lox && p.x <= hix && p.y >= loy && p.y <= hiy)
}

/** Clusters represented in a lasso selection, most-selected first. */
export function selectedClusters(selection: ScatterPoint[]): number[] {
  const counts = new Map<number, number>()
  for (const p of selection) counts.set(p.cluster, (counts.get(p.cluster) ?? 0) + 1)
  return [...counts.entries()].sort((a, b) => b[1] - a[1] || a[0] - b[0]).map(([c]) => c)
}
