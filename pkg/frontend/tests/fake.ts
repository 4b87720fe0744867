/**
 * In-memory stand-in for the review service, implementing the documented
 * endpoint set with the same labeling/propagation semantics. Unit tests run
 * against this; the integration test runs the real service.
 */

import type { Transport } from '../src/api'
import type { ClusterSummary, Proposal } from '../src/types'

export interface FakeState {
  classes: string[]
  neighbors: Record<number, number[]>
  sampleCounts: Record<number, number>
  binCounts: Record<number, number[]>
  capPerClass: number
}

export const DEFAULT_STATE: FakeState = {
  classes: ['ADI', 'LYM', 'MUS', 'FCT', 'MUC', 'NCS', 'BLD', 'TUM', 'NOR'],
  neighbors: { 0: [1, 2], 1: [0, 2], 2: [1, 3], 3: [2, 1] },
  sampleCounts: { 0: 4, 1: 6, 2: 2, 3: 4 },
  binCounts: { 0: [2, 2, 2, 2, 2], 1: [2, 2, 2, 2, 2], 2: [2, 2, 2, 2, 2], 3: [2, 2, 2, 2, 2] },
  capPerClass: 70_000,
}

interface HttpError {
  status: number
  detail: string
}

export class FakeService {
  labels = new Map<number, { tissue: string; source: string; reviewer: string }>()
  proposals: Proposal[] = []
  private nextProposalId = 0

  constructor(readonly state: FakeState = structuredClone(DEFAULT_STATE)) {}

  transport(): Transport {
    return async (method, path, body) => {
      const result = this.handle(method, path, body)
      if ((result as HttpError)?.status >= 400) {
        const { ApiError } = await import('../src/api')
        throw new ApiError((result as HttpError).status, (result as HttpError).detail)
      }
      return result
    }
  }

  summary(cluster: number): ClusterSummary {
    const bins = this.state.binCounts[cluster]
    return {
      cluster,
      tile_count: bins.reduce((a, b) => a + b, 0),
      bins: bins.map((count, bin) => ({ bin, count })),
      label: this.labels.get(cluster) ?? null,
      neighbors: this.state.neighbors[cluster],
      representatives: bins.map((_, bin) => `slide:${cluster * 2560 + bin * 256}:0`),
    } as ClusterSummary
  }

  private createProposals(source: number, tissue: string): Proposal[] {
    const created: Proposal[] = []
    for (const neighbor of this.state.neighbors[source]) {
      if (this.labels.has(neighbor)) continue
      created.push({
        id: this.nextProposalId++,
        source_cluster: source,
        target_cluster: neighbor,
        tissue,
        status: 'pending',
      })
    }
    this.proposals.push(...created)
    return created
  }

  // eslint-disable-next-line complexity
  handle(method: string, path: string, body?: unknown): unknown {
    const [route, query] = path.split('?')
    const params = new URLSearchParams(query ?? '')

    if (method === 'GET' && route === '/classes') {
      return { classes: this.state.classes.map((name) => ({ name, color: [0, 0, 0] })) }
    }
    if (method === 'GET' && route === '/clusters') {
      let ids = Object.keys(this.state.neighbors).map(Number).sort((a, b) => a - b)
      const filter = params.get('filter')
      if (filter === 'labeled') ids = ids.filter((c) => this.labels.has(c))
      if (filter === 'unlabeled') ids = ids.filter((c) => !this.labels.has(c))
      return { clusters: ids.map((c) => this.summary(c)) }
    }
    const clusterMatch = route.match(/^\/clusters\/(\d+)$/)
    if (method === 'GET' && clusterMatch) {
      return this.summary(Number(clusterMatch[1]))
    }
    const tilesMatch = route.match(/^\/clusters\/(\d+)\/tiles$/)
    if (method === 'GET' && tilesMatch) {
      const cluster = Number(tilesMatch[1])
      const bin = Number(params.get('bin') ?? 0)
      const count = this.state.binCounts[cluster][bin] ?? 0
      return {
        cluster,
        bin,
        page: Number(params.get('page') ?? 0),
        total: count,
        tiles: Array.from({ length: count }, (_, i) => `slide:${cluster * 2560 + bin * 512 + i * 256}:0`),
      }
    }
    const labelMatch = route.match(/^\/clusters\/(\d+)\/label$/)
    if (method === 'POST' && labelMatch) {
      const cluster = Number(labelMatch[1])
      const request = body as { tissue: string; reviewer: string; override?: boolean }
      if (!this.state.classes.includes(request.tissue)) {
        return { status: 422, detail: `unknown class ${request.tissue}; registered classes: ...` }
      }
      const existing = this.labels.get(cluster)
      if (existing && existing.source === 'human' && !request.override) {
        return { status: 409, detail: `cluster ${cluster} already labeled ${existing.tissue}` }
      }
      this.labels.set(cluster, { tissue: request.tissue, source: 'human', reviewer: request.reviewer })
      const created = this.createProposals(cluster, request.tissue)
      return { summary: this.summary(cluster), proposals: created }
    }
    if (method === 'GET' && route === '/proposals') {
      const status = params.get('status')
      return { proposals: this.proposals.filter((p) => !status || p.status === status) }
    }
    const resolveMatch = route.match(/^\/proposals\/(\d+)\/resolve$/)
    if (method === 'POST' && resolveMatch) {
      const id = Number(resolveMatch[1])
      const request = body as { decision: 'accept' | 'reject'; reviewer: string }
      const proposal = this.proposals.find((p) => p.id === id)
      if (!proposal) return { status: 422, detail: `unknown proposal ${id}` }
      if (proposal.status !== 'pending') {
        return { status: 409, detail: `proposal ${id} already ${proposal.status}` }
      }
      if (request.decision === 'accept' && this.labels.has(proposal.target_cluster)) {
        return { status: 409, detail: `cluster ${proposal.target_cluster} was labeled after this proposal` }
      }
      if (request.decision === 'reject') {
        proposal.status = 'rejected'
        return { proposal, new_proposals: [] }
      }
      proposal.status = 'accepted'
      this.labels.set(proposal.target_cluster, {
        tissue: proposal.tissue,
        source: 'propagated-accepted',
        reviewer: request.reviewer,
      })
      const created = this.createProposals(proposal.target_cluster, proposal.tissue)
      return { proposal, new_proposals: created }
    }
    if (method === 'GET' && route === '/progress') {
      const verified: Record<string, number> = {}
      for (const name of this.state.classes) verified[name] = 0
      for (const [cluster, label] of this.labels) {
        verified[label.tissue] += this.state.sampleCounts[cluster] ?? 0
      }
      return {
        cap_per_class: this.state.capPerClass,
        classes: this.state.classes.map((tissue) => ({
          tissue,
          verified: verified[tissue],
          fraction: verified[tissue] / this.state.capPerClass,
        })),
      }
    }
    if (method === 'GET' && route === '/scatter') {
      const points = Object.keys(this.state.neighbors).flatMap((c) =>
        Array.from({ length: 3 }, (_, i) => ({
          tile_id: `slide:${Number(c) * 2560 + i * 256}:0`,
          x: Number(c) * 2 + i * 0.1,
          y: Number(c),
          cluster: Number(c),
        })),
      )
      return { points }
    }
    return { status: 404, detail: `no route for ${method} ${route}` }
  }
}
