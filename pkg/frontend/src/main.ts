// Page wiring: poll the escalation queue, open a review session, drive the
// slice viewer and review actions. Status polling every 2 s; no mutation is
// reflected until the service confirms it.

import { ServiceClient, ServiceError } from './api.js';
import { buildQueue, formatDice, formatDose, formatLesion, isReviewable } from './queue.js';
import { canvasToVoxel, renderQueue, renderSlice } from './render.js';
import { decodeGrid, type VoxelGrid } from './rvol.js';
import { ReviewSession, type ClickPoint } from './session.js';
import type { WorkflowRecordDoc } from './types.js';

const POLL_MS = 2000;

const baseUrl = (document.getElementById('service-url') as HTMLInputElement | null)?.value
  ?? 'http://127.0.0.1:8080';
const client = new ServiceClient(baseUrl);

const queueEl = document.getElementById('queue') as HTMLElement;
const detailEl = document.getElementById('detail') as HTMLElement;
const planEl = document.getElementById('plan-text') as HTMLElement;
const statusEl = document.getElementById('detail-status') as HTMLElement;
const diceEl = document.getElementById('dice-readout') as HTMLElement;
const banner = document.getElementById('banner') as HTMLElement;
const canvas = document.getElementById('slice') as HTMLCanvasElement;
const sliceInput = document.getElementById('slice-index') as HTMLInputElement;
const marginInput = document.getElementById('margin-input') as HTMLInputElement;

let session: ReviewSession | null = null;
let volume: VoxelGrid | null = null;
let mask: VoxelGrid | null = null;
let clicks: ClickPoint[] = [];

function showError(err: unknown): void {
  banner.textContent = err instanceof ServiceError ? `service error ${err.status}: ${err.message}` : String(err);
  banner.classList.add('visible');
  setTimeout(() => banner.classList.remove('visible'), 4000);
}

async function refreshQueue(): Promise<void> {
  try {
    const escalated = (await client.escalations()).cases;
    const all = (await client.listCases()).cases;
    const finalized = all.filter(
      (c): c is WorkflowRecordDoc => c.status === 'Finalized',
    );
    renderQueue(queueEl, buildQueue(escalated, finalized), openCase);
    banner.classList.remove('visible');
  } catch (err) {
    banner.textContent = `service unreachable at ${baseUrl}`;
    banner.classList.add('visible');
  }
}

async function redraw(): Promise<void> {
  if (!session?.record || !volume) return;
  const z = Math.min(Number(sliceInput.value), volume.dims[2] - 1);
  if (session.record.mask_ref) {
    try {
      mask = decodeGrid(await client.maskBytes(session.caseId, session.record.mask_ref));
    } catch {
      mask = null;
    }
  }
  renderSlice(canvas, volume, mask, z);
  statusEl.textContent = `${session.record.case_id}: ${session.record.status}`;
  statusEl.append(
    document.createElement('br'),
    formatDose(session.record),
    document.createElement('br'),
    formatLesion(session.record),
  );
  planEl.textContent = session.record.final_plan_text ?? '(no plan yet)';
}

async function openCase(caseId: string): Promise<void> {
  session = new ReviewSession(client, caseId);
  clicks = [];
  try {
    await session.load();
    volume = decodeGrid(await client.volumeBytes(caseId));
    sliceInput.max = String(volume.dims[2] - 1);
    sliceInput.value = String(Math.floor(volume.dims[2] / 2));
    detailEl.classList.add('visible');
    await redraw();
  } catch (err) {
    showError(err);
  }
}

async function decide(decision: 'approve' | 'reject' | 'modify'): Promise<void> {
  if (!session) return;
  try {
    if (decision === 'modify') {
      session.setPatchField('safety_margin', Number(marginInput.value));
    }
    await session.submitReview(decision);
    await redraw();
    await refreshQueue();
  } catch (err) {
    showError(err); // illegal transitions surface verbatim; state unchanged
  }
}

canvas.addEventListener('click', async (event) => {
  if (!session || !volume) return;
  const [x, y] = canvasToVoxel(canvas, event, volume);
  const z = Number(sliceInput.value);
  // clicks accumulate within the case: positives grow, negatives carve back
  const point: ClickPoint = { x, y, z, positive: !event.shiftKey };
  const error = session.stagePrompt({ kind: 'click', points: [...clicks, point] }, volume.dims);
  if (error) {
    showError(error);
    return;
  }
  clicks.push(point);
  try {
    const resp = await session.placePrompt();
    diceEl.textContent = formatDice(resp);
    await redraw();
  } catch (err) {
    showError(err);
  }
});

document.getElementById('clear-prompts')?.addEventListener('click', () => {
  clicks = [];
  diceEl.textContent = '';
});

sliceInput.addEventListener('input', () => void redraw());
document.getElementById('approve')?.addEventListener('click', () => void decide('approve'));
document.getElementById('reject')?.addEventListener('click', () => void decide('reject'));
document.getElementById('modify')?.addEventListener('click', () => void decide('modify'));

void refreshQueue();
setInterval(() => {
  void refreshQueue();
  if (session?.record && !isReviewable(session.record)) void session.load().then(redraw);
}, POLL_MS);
