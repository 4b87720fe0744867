/**
 * Proposal queue: walk pending proposals, accept/reject against the service,
 * append newly generated proposals, skip entries resolved elsewhere.
 */

import { ApiError, ReviewApi } from './api'
import type { Proposal } from './types'

export type QueueEvent =
  | { kind: 'advanced'; next: Proposal }
  | { kind: 'skipped-stale'; proposal: Proposal; notice: string }
  | { kind: 'drained' }

export class ProposalQueue {
  private queue: Proposal[] = []
  lastNotice = ''

  constructor(private readonly api: ReviewApi, readonly reviewer: string) {}

  async refresh(): Promise<void> {
    this.queue = await this.api.listProposals('pending')
  }

  get length(): number {
    return this.queue.length
  }

  get current(): Proposal | null {
    return this.queue[0] ?? null
  }

  /** Resolve the head proposal; returns what the queue did next. */
  async resolve(decision: 'accept' | 'reject'): Promise<QueueEvent> {
    const head = this.queue[0]
    if (!head) return { kind: 'drained' }
    try {
      const response = await this.api.resolveProposal(head.id, decision, this.reviewer)
      this.queue.shift()
      this.queue.push(...response.new_proposals)
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // resolved or labeled elsewhere: drop it and move on
        this.queue.shift()
        this.lastNotice = `proposal ${head.id} skipped: ${error.detail}`
        const next = this.queue[0]
        return next
          ? { kind: 'skipped-stale', proposal: head, notice: this.lastNotice }
          : { kind: 'drained' }
      }
      throw error
    }
    const next = this.queue[0]
    return next ? { kind: 'advanced', next } : { kind: 'drained' }
  }
}
