/** Wire types for the review service JSON API. */

export interface BinCount {
  bin: number
  count: number
}

export interface ClusterLabel {
  tissue: string
  source: 'human' | 'propagated-accepted'
  reviewer: string
}

export interface ClusterSummary {
  cluster: number
  tile_count: number
  bins: BinCount[]
  label: ClusterLabel | null
  neighbors: number[]
  representatives: string[]
}

export interface Proposal {
  id: number
  source_cluster: number
  target_cluster: number
  tissue: string
  status: 'pending' | 'accepted' | 'rejected'
}

export interface ClassEntry {
  name: string
  color: [number, number, number]
}

export interface ClassProgress {
  tissue: string
  verified: number
  fraction: number
}

export interface Progress {
  cap_per_class: number
  classes: ClassProgress[]
}

export interface TilePage {
  cluster: number
  bin: number
  page: number
  total: number
  tiles: string[]
}

export interface ScatterPoint {
  tile_id: string
  x: number
  y: number
  cluster: number
}

export interface LabelResponse {
  summary: ClusterSummary
  proposals: Proposal[]
}

export interface ResolveResponse {
  proposal: Proposal
  new_proposals: Proposal[]
}
