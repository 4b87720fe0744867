/**
 * Typed client over the review service HTTP API.
 *
 * Every request goes through a single transport and is appended to an
 * endpoint log, so tests can assert the client never talks to anything
 * outside the documented endpoint set.
 */

import type {
  ClassEntry,
  ClusterSummary,
  LabelResponse,
  Progress,
  Proposal,
  ResolveResponse,
  ScatterPoint,
  TilePage,
} from './types'

export interface LoggedRequest {
  method: 'GET' | 'POST'
  path: string
}

export interface Transport {
  (method: 'GET' | 'POST', path: string, body?: unknown): Promise<unknown>
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`)
  }
}

/** Documented endpoint set; anything else is a client bug. */
export const DOCUMENTED_ENDPOINTS: { method: 'GET' | 'POST'; pattern: RegExp }[] = [
  { method: 'GET', pattern: /^\/clusters(\?.*)?$/ },
  { method: 'GET', pattern: /^\/clusters\/\d+$/ },
  { method: 'GET', pattern: /^\/clusters\/\d+\/tiles(\?.*)?$/ },
  { method: 'POST', pattern: /^\/clusters\/\d+\/label$/ },
  { method: 'GET', pattern: /^\/proposals(\?.*)?$/ },
  { method: 'POST', pattern: /^\/proposals\/\d+\/resolve$/ },
  { method: 'GET', pattern: /^\/progress$/ },
  { method: 'GET', pattern: /^\/scatter$/ },
  { method: 'GET', pattern: /^\/classes$/ },
  { method: 'GET', pattern: /^\/tiles\/[^/]+\/image$/ },
]

export function isDocumented(request: LoggedRequest): boolean {
  return DOCUMENTED_ENDPOINTS.some(
    (e) => e.method === request.method && e.pattern.test(request.path),
  )
}

export function fetchTransport(baseUrl: string): Transport {
  return async (method, path, body) => {
    const response = await fetch(baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { 'content-type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    })
    const text = await response.text()
    const payload = text ? JSON.parse(text) : null
    if (!response.ok) {
      throw new ApiError(response.status, payload?.detail ?? response.statusText)
    }
    return payload
  }
}

export class ReviewApi {
  readonly log: LoggedRequest[] = []

  constructor(private readonly transport: Transport) {}

  private call(method: 'GET' | 'POST', path: string, body?: unknown): Promise<unknown> {
    this.log.push({ method, path })
    return this.transport(method, path, body)
  }

  async listClusters(filter?: 'labeled' | 'unlabeled', tissue?: string): Promise<ClusterSummary[]> {
    const params = new URLSearchParams()
    if (filter) params.set('filter', filter)
    if (tissue) params.set('tissue', tissue)
    const query = params.toString()
    const body = (await this.call('GET', `/clusters${query ? '?' + query : ''}`)) as {
      clusters: ClusterSummary[]
    }
    return body.clusters
  }

  async getCluster(clusterId: number): Promise<ClusterSummary> {
    return (await this.call('GET', `/clusters/${clusterId}`)) as ClusterSummary
  }

  async clusterTiles(clusterId: number, bin: number, page = 0): Promise<TilePage> {
    return (await this.call(
      'GET',
      `/clusters/${clusterId}/tiles?bin=${bin}&page=${page}`,
    )) as TilePage
  }

  async submitLabel(
    clusterId: number,
    tissue: string,
    reviewer: string,
    override = false,
  ): Promise<LabelResponse> {
    return (await this.call('POST', `/clusters/${clusterId}/label`, {
      tissue,
      reviewer,
      override,
    })) as LabelResponse
  }

  async listProposals(status?: Proposal['status']): Promise<Proposal[]> {
    const query = status ? `?status=${status}` : ''
    const body = (await this.call('GET', `/proposals${query}`)) as { proposals: Proposal[] }
    return body.proposals
  }

  async resolveProposal(
    proposalId: number,
    decision: 'accept' | 'reject',
    reviewer: string,
  ): Promise<ResolveResponse> {
    return (await this.call('POST', `/proposals/${proposalId}/resolve`, {
      decision,
      reviewer,
    })) as ResolveResponse
  }

  async progress(): Promise<Progress> {
    return (await this.call('GET', '/progress')) as Progress
  }

  async scatter(): Promise<ScatterPoint[]> {
    const body = (await this.call('GET', '/scatter')) as { points: ScatterPoint[] }
    return body.points
  }

  async classes(): Promise<ClassEntry[]> {
    const body = (await this.call('GET', '/classes')) as { classes: ClassEntry[] }
    return body.classes
  }

  tileImageUrl(tileId: string): string {
    // thumbnails load lazily via <img src>; the log records the path shape
    return `/tiles/${encodeURIComponent(tileId)}/image`
  }
}
