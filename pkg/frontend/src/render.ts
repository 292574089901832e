// Browser-only rendering: queue table, plan panel, slice canvas with mask
// overlay. Everything displayed comes from the view-models in queue.ts or
// verbatim service payloads.

import type { QueueRow } from './queue.js';
import { axialSlice, windowLevels, type VoxelGrid } from './rvol.js';

export function renderQueue(
  container: HTMLElement,
  rows: QueueRow[],
  onOpen: (caseId: string) => void,
): void {
  container.replaceChildren();
  if (rows.length === 0) {
    const empty = document.createElement('p');
    empty.className = 'empty';
    empty.textContent = 'No cases awaiting review.';
    container.appendChild(empty);
    return;
  }
  for (const row of rows) {
    const card = document.createElement('div');
    card.className = `case-card status-${row.status.toLowerCase()}`;
    const title = document.createElement('h3');
    title.textContent = `${row.caseId} — ${row.status} (${row.planCount} plans)`;
    card.appendChild(title);
    const list = document.createElement('ul');
    list.className = 'feedback';
    for (const line of row.feedbackLines) {
      const item = document.createElement('li');
      item.textContent = line; // verbatim feedback from the optimizer
      list.appendChild(item);
    }
    card.appendChild(list);
    const open = document.createElement('button');
    open.textContent = 'Open';
    open.onclick = () => onOpen(row.caseId);
    card.appendChild(open);
    container.appendChild(card);
  }
}

export function renderSlice(
  canvas: HTMLCanvasElement,
  volume: VoxelGrid,
  mask: VoxelGrid | null,
  z: number,
  scale = 6,
): void {
  const slice = axialSlice(volume, z);
  const gray = windowLevels(slice);
  canvas.width = slice.width * scale;
  canvas.height = slice.height * scale;
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const image = ctx.createImageData(slice.width, slice.height);
  const overlay = mask ? axialSlice(mask, z) : null;
  for (let i = 0; i < gray.length; i++) {
    const g = gray[i] as number;
    const hit = overlay !== null && (overlay.values[i] as number) >= 0.5;
    image.data[i * 4] = hit ? 255 : g;
    image.data[i * 4 + 1] = hit ? Math.min(255, g + 40) : g;
    image.data[i * 4 + 2] = g;
    image.data[i * 4 + 3] = 255;
  }
  // draw at voxel resolution, then scale up without smoothing
  const off = document.createElement('canvas');
  off.width = slice.width;
  off.height = slice.height;
  off.getContext('2d')?.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

export function canvasToVoxel(
  canvas: HTMLCanvasElement,
  event: MouseEvent,
  volume: VoxelGrid,
): [number, number] {
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor(((event.clientX - rect.left) / rect.width) * volume.dims[0]);
  const y = Math.floor(((event.clientY - rect.top) / rect.height) * volume.dims[1]);
  return [x, y];
}
