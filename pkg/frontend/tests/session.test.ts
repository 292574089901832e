// Review session behavior against a mocked service: patch gating, prompt
// bounds validation, and state always reflecting the service response.

import { describe, expect, it } from 'vitest';

import { ServiceClient, ServiceError } from '../src/api.js';
import { ReviewSession, promptBoundsError, promptSpec } from '../src/session.js';
import { makeRecord, mockFetch } from './helpers.js';

const DIMS: [number, number, number] = [36, 36, 22];

const click = (x: number, y: number, z: number, positive = true) => ({ x, y, z, positive });

describe('prompt grammar and bounds', () => {
  it('renders the service prompt grammar', () => {
    expect(promptSpec({ kind: 'click', points: [click(1, 2, 3)] })).toBe('click:1,2,3,+');
    expect(
      promptSpec({ kind: 'click', points: [click(1, 2, 3), click(4, 5, 6, false)] }),
    ).toBe('click:1,2,3,+;4,5,6,-');
    expect(promptSpec({ kind: 'bbox', lo: [0, 1, 2], hi: [5, 6, 7] })).toBe('bbox:0,1,2,5,6,7');
  });

  it('rejects out-of-bounds prompts client-side', () => {
    expect(
      promptBoundsError({ kind: 'click', points: [click(36, 0, 0)] }, DIMS),
    ).toMatch(/outside volume/);
    expect(
      promptBoundsError({ kind: 'click', points: [click(-1, 0, 0)] }, DIMS),
    ).toMatch(/outside volume/);
    expect(
      promptBoundsError({ kind: 'bbox', lo: [0, 0, 0], hi: [40, 10, 10] }, DIMS),
    ).toMatch(/outside volume/);
    expect(promptBoundsError({ kind: 'click', points: [click(35, 35, 21)] }, DIMS)).toBeNull();
  });

  it('rejects prompts with no positive seed', () => {
    expect(
      promptBoundsError({ kind: 'click', points: [click(5, 5, 5, false)] }, DIMS),
    ).toMatch(/positive point/);
    expect(promptBoundsError({ kind: 'click', points: [] }, DIMS)).toMatch(/at least one point/);
  });

  it('accumulates clicks for iterative refinement', async () => {
    const { fetchFn } = mockFetch({ '/cases/demo-0001': () => makeRecord() });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    expect(session.addClick(click(10, 10, 5), DIMS)).toBeNull();
    expect(session.addClick(click(12, 10, 5, false), DIMS)).toBeNull();
    expect(session.stagedPrompt).toEqual({
      kind: 'click',
      points: [click(10, 10, 5), click(12, 10, 5, false)],
    });
  });

  it('never sends a rejected prompt to the service', async () => {
    const { fetchFn, calls } = mockFetch({ '/cases/demo-0001': () => makeRecord() });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    const error = session.stagePrompt({ kind: 'click', points: [click(99, 0, 0)] }, DIMS);
    expect(error).toMatch(/outside volume/);
    expect(session.stagedPrompt).toBeNull();
    expect(calls.filter((c) => c.url.endsWith('/segment'))).toHaveLength(0);
  });
});

describe('patch gating', () => {
  it('allows patch edits only while the status permits modification', async () => {
    const { fetchFn } = mockFetch({ '/cases/demo-0001': () => makeRecord() });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    session.setPatchField('safety_margin', 12);
    expect(session.pendingPatch).toEqual({ safety_margin: 12 });
  });

  it('blocks patch edits on terminal records', async () => {
    const { fetchFn } = mockFetch({
      '/cases/demo-0001': () => makeRecord({ status: 'Approved' }),
    });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    expect(() => session.setPatchField('safety_margin', 12)).toThrow(/Approved/);
  });
});

describe('review submission reflects the service, never optimism', () => {
  it('modify sends the patch and adopts the returned status', async () => {
    let reviewBody: unknown = null;
    const { fetchFn } = mockFetch({
      '/cases/demo-0001': () => makeRecord(),
      '/cases/demo-0001/review': (init) => {
        reviewBody = JSON.parse(String(init?.body));
        return makeRecord({ status: 'Finalized' });
      },
    });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    session.setPatchField('safety_margin', 12);
    const record = await session.submitReview('modify');
    expect(reviewBody).toEqual({ decision: 'modify', patch: { safety_margin: 12 } });
    expect(record.status).toBe('Finalized');
    expect(session.pendingPatch).toEqual({});
  });

  it('an illegal transition leaves the session state unchanged', async () => {
    const { fetchFn } = mockFetch({
      '/cases/demo-0001': () => makeRecord({ status: 'Approved' }),
      '/cases/demo-0001/review': () =>
        new Response(JSON.stringify({ error: 'Approved -> Rejected' }), { status: 409 }),
    });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    await expect(session.submitReview('reject')).rejects.toThrowError(ServiceError);
    expect(session.record?.status).toBe('Approved');
  });

  it('placePrompt posts the staged prompt and refreshes the record', async () => {
    const segmentResponse = {
      case_id: 'demo-0001',
      mask_ref: 'masks/m001.rmsk',
      dice_vs_previous: 0.97,
    };
    const { fetchFn, calls } = mockFetch({
      '/cases/demo-0001': () => makeRecord(),
      '/segment': () => segmentResponse,
    });
    const session = new ReviewSession(new ServiceClient('http://svc', fetchFn), 'demo-0001');
    await session.load();
    expect(session.stagePrompt({ kind: 'click', points: [click(18, 18, 11)] }, DIMS)).toBeNull();
    const resp = await session.placePrompt();
    expect(resp.mask_ref).toBe('masks/m001.rmsk');
    const segmentCall = calls.find((c) => c.url.endsWith('/segment'));
    expect(JSON.parse(String(segmentCall?.init?.body))).toEqual({
      case_id: 'demo-0001',
      prompt: 'click:18,18,11,+',
    });
    expect(session.stagedPrompt).toBeNull();
  });
});
