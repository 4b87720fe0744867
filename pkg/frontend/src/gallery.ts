/**
 * Gallery view-model: one column per distance bin (nearest-centroid first),
 * hotkeys 1-9 mapped to the registered class list in order.
 */

import { ReviewApi } from './api'
import type { ClassEntry, ClusterSummary, LabelResponse } from './types'

export interface GalleryColumn {
  bin: number
  count: number
  tiles: string[]
  thumbnails: string[]
}

export interface GalleryViewModel {
  cluster: number
  tileCount: number
  columns: GalleryColumn[]
  label: ClusterSummary['label']
  neighbors: number[]
  hotkeys: Map<string, string>
  hotkeysEnabled: boolean
}

export function hotkeyMap(classes: ClassEntry[]): Map<string, string> {
  const map = new Map<string, string>()
  classes.slice(0, 9).forEach((entry, i) => map.set(String(i + 1), entry.name))
  return map
}

export class GalleryController {
  overrideToggle = false

  constructor(
    private readonly api: ReviewApi,
    private readonly classes: ClassEntry[],
    readonly reviewer: string,
  ) {}

  async load(clusterId: number): Promise<GalleryViewModel> {
    const summary = await this.api.getCluster(clusterId)
    return this.toViewModel(summary, await this.loadColumns(summary))
  }

  private async loadColumns(summary: ClusterSummary): Promise<GalleryColumn[]> {
    const columns: GalleryColumn[] = []
    for (const bin of [...summary.bins].sort((a, b) => a.bin - b.bin)) {
      const page = await this.api.clusterTiles(summary.cluster, bin.bin, 0)
      columns.push({
        bin: bin.bin,
        count: bin.count,
        tiles: page.tiles,
        thumbnails: page.tiles.map((t) => this.api.tileImageUrl(t)),
      })
    }
    return columns
  }

  toViewModel(summary: ClusterSummary, columns: GalleryColumn[]): GalleryViewModel {
    return {
      cluster: summary.cluster,
      tileCount: summary.tile_count,
      columns,
      label: summary.label,
      neighbors: summary.neighbors,
      hotkeys: hotkeyMap(this.classes),
      hotkeysEnabled: summary.label === null || this.overrideToggle,
    }
  }

  /** Hotkey press on the open gallery; returns null when the key is unbound
   * or labeling is disabled (labeled cluster without the override toggle). */
  async pressHotkey(view: GalleryViewModel, key: string): Promise<LabelResponse | null> {
    const tissue = view.hotkeys.get(key)
    if (!tissue || !view.hotkeysEnabled) return null
    return this.api.submitLabel(view.cluster, tissue, this.reviewer, this.overrideToggle)
  }
}
