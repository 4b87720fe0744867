/** HTML renderers for the single-screen review flow (pure string builders). */

import type { GalleryViewModel } from './gallery'
import type { ProgressRow } from './progress'
import type { Proposal } from './types'

function esc(text: string): string {
  return text.replace(/[&<>"]/g, (c) => ({ '&': '&amp;', '<': '&lt;', '>': '&gt;', '"': '&quot;' }[c]!))
}

export function renderGallery(view: GalleryViewModel): string {
  const label = view.label
    ? `<span class="badge" data-source="${esc(view.label.source)}">${esc(view.label.tissue)}</span>`
    : '<span class="badge unlabeled">unlabeled</span>'
  const columns = view.columns
    .map(
      (col) => `
    <div class="bin-column" data-bin="${col.bin}">
      <h4>bin ${col.bin} (${col.count})</h4>
      ${col.thumbnails
        .map((src, i) => `<img loading="lazy" src="${esc(src)}" alt="${esc(col.tiles[i])}">`)
        .join('\n      ')}
    </div>`,
    )
    .join('\n')
  const chips = view.neighbors
    .map((n) => `<button class="chip" data-cluster="${n}">cluster ${n}</button>`)
    .join(' ')
  const keys = [...view.hotkeys.entries()]
    .map(([key, tissue]) => `<kbd data-enabled="${view.hotkeysEnabled}">${key}:${esc(tissue)}</kbd>`)
    .join(' ')
  return `<section class="gallery" data-cluster="${view.cluster}">
  <header>cluster ${view.cluster} — ${view.tileCount} tiles ${label}</header>
  <div class="bins">${columns}</div>
  <footer>neighbors: ${chips}<div class="hotkeys">${keys}</div></footer>
</section>`
}

export function renderQueueEntry(proposal: Proposal | null, queueLength: number): string {
  if (!proposal) {
    return '<section class="queue empty">all proposals resolved</section>'
  }
  return `<section class="queue" data-proposal="${proposal.id}">
  <p>label cluster ${proposal.target_cluster} as <b>${esc(proposal.tissue)}</b>
     (propagated from cluster ${proposal.source_cluster}) — ${queueLength} pending</p>
  <button data-action="accept">accept</button>
  <button data-action="reject">reject</button>
</section>`
}

export function renderProgress(rows: ProgressRow[]): string {
  const cells = rows
    .map(
      (row) => `
    <tr><td>${esc(row.tissue)}</td><td>${row.verified}</td><td>${row.cap}</td>
        <td><progress max="1" value="${row.fraction}"></progress> ${row.percentLabel}</td></tr>`,
    )
    .join('')
  return `<table class="progress"><thead>
  <tr><th>class</th><th>verified</th><th>cap</th><th>progress</th></tr>
</thead><tbody>${cells}</tbody></table>`
}
