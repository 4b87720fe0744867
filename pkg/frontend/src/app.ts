/**
 * Single-screen review app: gallery + proposal queue + progress, wired to the
 * service with optimistic refresh after every mutation. All state changes go
 * through the documented endpoints on ReviewApi; the DOM layer only renders.
 */

import { ApiError, ReviewApi, fetchTransport } from './api'
import { GalleryController, GalleryViewModel } from './gallery'
import { ProgressPanel } from './progress'
import { ProposalQueue } from './queue'
import { renderGallery, renderProgress, renderQueueEntry } from './render'

export class ReviewApp {
  private gallery!: GalleryController
  private view: GalleryViewModel | null = null
  readonly queue: ProposalQueue
  readonly progress: ProgressPanel

  constructor(
    private readonly api: ReviewApi,
    private readonly root: {
      gallery: HTMLElement
      queue: HTMLElement
      progress: HTMLElement
      banner: HTMLElement
    },
    readonly reviewer: string,
  ) {
    this.queue = new ProposalQueue(api, reviewer)
    this.progress = new ProgressPanel(api)
  }

  async start(): Promise<void> {
    try {
      const classes = await this.api.classes()
      this.gallery = new GalleryController(this.api, classes, this.reviewer)
      const clusters = await this.api.listClusters()
      if (clusters.length > 0) await this.openCluster(clusters[0].cluster)
      await this.queue.refresh()
      await this.refreshSidebar()
      this.root.banner.hidden = true
    } catch (error) {
      // blocking retry banner on an unreachable service
      this.root.banner.hidden = false
      this.root.banner.textContent = `service unreachable (${String(error)}); retrying in 3s`
      setTimeout(() => void this.start(), 3000)
    }
  }

  async openCluster(clusterId: number): Promise<void> {
    this.view = await this.gallery.load(clusterId)
    this.root.gallery.innerHTML = renderGallery(this.view)
    for (const chip of this.root.gallery.querySelectorAll<HTMLButtonElement>('.chip')) {
      chip.addEventListener('click', () => void this.openCluster(Number(chip.dataset.cluster)))
    }
  }

  /** Digit hotkey: label the open cluster, then refresh queue + tallies. */
  async onKey(key: string): Promise<void> {
    if (!this.view) return
    try {
      const response = await this.gallery.pressHotkey(this.view, key)
      if (!response) return
      await this.openCluster(response.summary.cluster)
      await this.queue.refresh()
      await this.refreshSidebar()
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.root.banner.hidden = false
        this.root.banner.textContent = error.detail
        return
      }
      throw error
    }
  }

  async onQueueAction(decision: 'accept' | 'reject'): Promise<void> {
    const event = await this.queue.resolve(decision)
    if (event.kind === 'skipped-stale') {
      this.root.banner.hidden = false
      this.root.banner.textContent = event.notice
    }
    await this.refreshSidebar()
  }

  private async refreshSidebar(): Promise<void> {
    this.root.queue.innerHTML = renderQueueEntry(this.queue.current, this.queue.length)
    for (const button of this.root.queue.querySelectorAll<HTMLButtonElement>('button[data-action]')) {
      button.addEventListener('click', () =>
        void this.onQueueAction(button.dataset.action as 'accept' | 'reject'),
      )
    }
    this.root.progress.innerHTML = renderProgress(await this.progress.refresh())
  }
}

export function mount(baseUrl: string, reviewer: string): ReviewApp {
  const api = new ReviewApi(fetchTransport(baseUrl))
  const app = new ReviewApp(
    api,
    {
      gallery: document.getElementById('gallery')!,
      queue: document.getElementById('queue')!,
      progress: document.getElementById('progress')!,
      banner: document.getElementById('banner')!,
    },
    reviewer,
  )
  document.addEventListener('keydown', (event) => {
    if (/^[1-9]$/.test(event.key)) void app.onKey(event.key)
  })
  void app.start()
  return app
}
