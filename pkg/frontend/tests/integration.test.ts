/**
 * Integration against the real review service on a fixture project:
 * seed-label surfaces neighbor proposals in proximity order, accept/reject
 * round-trips update GET /progress exactly, and the whole session stays on
 * documented endpoints.
 */

import { describe, expect, inject, it } from 'vitest'

import { ReviewApi, fetchTransport, isDocumented } from '../src/api'
import { GalleryController } from '../src/gallery'
import { ProgressPanel } from '../src/progress'
import { ProposalQueue } from '../src/queue'

describe('against the real service', () => {
  const url = inject('serviceUrl')
  const meta = inject('fixtureMeta')

  it('runs the full labeling round-trip', async () => {
    const api = new ReviewApi(fetchTransport(url))
    const classes = await api.classes()
    expect(classes.map((c) => c.name)).toContain('TUM')

    // seed-label a cluster; proposals must target its unlabeled neighbors
    // in centroid-proximity order
    const unlabeled = await api.listClusters('unlabeled')
    const seed = unlabeled[0]
    const response = await api.submitLabel(seed.cluster, 'TUM', 'integration')
    const expectedOrder = meta.neighbors[String(seed.cluster)]
    expect(response.proposals.map((p) => p.target_cluster)).toEqual(expectedOrder)

    // tallies reflect the seed cluster's sampled tiles exactly
    const panel = new ProgressPanel(api)
    let rows = await panel.refresh()
    let tum = rows.find((r) => r.tissue === 'TUM')!
    expect(tum.verified).toBe(meta.sample_counts[String(seed.cluster)])

    // accept the first proposal: target's samples join the tally
    const queue = new ProposalQueue(api, 'integration')
    await queue.refresh()
    const firstTarget = queue.current!.target_cluster
    const accepted = await queue.resolve('accept')
    expect(accepted.kind).not.toBe('drained')
    rows = await panel.refresh()
    tum = rows.find((r) => r.tissue === 'TUM')!
    expect(tum.verified).toBe(
      meta.sample_counts[String(seed.cluster)] + meta.sample_counts[String(firstTarget)],
    )

    // reject the next: tallies unchanged
    const before = tum.verified
    await queue.resolve('reject')
    rows = await panel.refresh()
    expect(rows.find((r) => r.tissue === 'TUM')!.verified).toBe(before)

    // displayed tallies equal the wire payload exactly
    const wire = await api.progress()
    expect(rows.map((r) => [r.tissue, r.verified])).toEqual(
      wire.classes.map((c) => [c.tissue, c.verified]),
    )

    // gallery + scatter round out the session
    const gallery = new GalleryController(api, classes, 'integration')
    const view = await gallery.load(seed.cluster)
    expect(view.columns.length).toBeGreaterThan(0)
    expect(view.hotkeysEnabled).toBe(false)
    const points = await api.scatter()
    expect(points.length).toBe(40)

    // endpoint-log assertion: documented endpoints only
    for (const request of api.log) {
      expect(isDocumented(request), `${request.method} ${request.path}`).toBe(true)
    }
    const mutations = api.log.filter((r) => r.method === 'POST')
    expect(mutations.length).toBe(3)

    // tile image endpoint serves real PNG bytes
    const tileId = view.columns[0].tiles[0]
    const image = await fetch(url + api.tileImageUrl(tileId))
    expect(image.status).toBe(200)
    expect(image.headers.get('content-type')).toBe('image/png')
    const bytes = new Uint8Array(await image.arrayBuffer())
    expect([...bytes.slice(1, 4)]).toEqual([0x50, 0x4e, 0x47]) // "PNG"
  })

  it('conflicting relabel is rejected with 409 and leaves state intact', async () => {
    const api = new ReviewApi(fetchTransport(url))
    const labeled = await api.listClusters('labeled')
    const target = labeled.find((c) => c.label!.source === 'human')!
    await expect(api.submitLabel(target.cluster, 'NOR', 'integration')).rejects.toMatchObject({
      status: 409,
    })
    const fresh = await api.getCluster(target.cluster)
    expect(fresh.label!.tissue).toBe(target.label!.tissue)
  })
})
