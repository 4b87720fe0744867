/** Per-class verified-tile progress against the dataset cap. */

import { ReviewApi } from './api'
import type { Progress } from './types'

export interface ProgressRow {
  tissue: string
  verified: number
  cap: number
  fraction: number
  percentLabel: string
}

export function progressRows(progress: Progress): ProgressRow[] {
  return progress.classes.map((entry) => ({
    tissue: entry.tissue,
    verified: entry.verified,
    cap: progress.cap_per_class,
    fraction: entry.fraction,
    percentLabel: `${(entry.fraction * 100).toFixed(2)}%`,
  }))
}

export class ProgressPanel {
  rows: ProgressRow[] = []

  constructor(private readonly api: ReviewApi) {}

  /** Re-read GET /progress; the displayed tallies are exactly its payload. */
  async refresh(): Promise<ProgressRow[]> {
    this.rows = progressRows(await this.api.progress())
    return this.rows
  }
}
