// Client-side container decoding: header parsing, x-fastest indexing,
// slice extraction and display windowing.

import { describe, expect, it } from 'vitest';

import { axialSlice, decodeGrid, voxelAt, windowLevels } from '../src/rvol.js';
import { encodeGridBytes } from './helpers.js';

describe('voxel container decoding', () => {
  it('decodes an RVOL header and payload', () => {
    const values = Array.from({ length: 8 }, (_, i) => i / 2);
    const grid = decodeGrid(encodeGridBytes('RVOL', [2, 2, 2], [1, 1.5, 2], values));
    expect(grid.kind).toBe('volume');
    expect(grid.dims).toEqual([2, 2, 2]);
    expect(grid.spacing[1]).toBeCloseTo(1.5);
    // x-fastest: (1,0,0) is the second stored value
    expect(voxelAt(grid, 1, 0, 0)).toBeCloseTo(0.5);
    expect(voxelAt(grid, 0, 1, 0)).toBeCloseTo(1.0);
    expect(voxelAt(grid, 0, 0, 1)).toBeCloseTo(2.0);
  });

  it('decodes an RMSK payload as bytes', () => {
    const grid = decodeGrid(encodeGridBytes('RMSK', [2, 1, 1], [1, 1, 1], [1, 0]));
    expect(grid.kind).toBe('mask');
    expect(voxelAt(grid, 0, 0, 0)).toBe(1);
    expect(voxelAt(grid, 1, 0, 0)).toBe(0);
  });

  it('rejects bad magic and truncated payloads', () => {
    const good = encodeGridBytes('RVOL', [1, 1, 1], [1, 1, 1], [3.5]);
    const bad = good.slice(0);
    new DataView(bad).setUint8(0, 'X'.charCodeAt(0));
    expect(() => decodeGrid(bad)).toThrow(/bad magic/);
    expect(() => decodeGrid(good.slice(0, good.byteLength - 1))).toThrow(/payload mismatch/);
    expect(() => decodeGrid(new ArrayBuffer(4))).toThrow(/too short/);
  });

  it('extracts axial slices in x-fastest order', () => {
    const values = Array.from({ length: 12 }, (_, i) => i);
    const grid = decodeGrid(encodeGridBytes('RVOL', [2, 2, 3], [1, 1, 1], values));
    const slice = axialSlice(grid, 1);
    expect(slice.width).toBe(2);
    expect(slice.height).toBe(2);
    expect(Array.from(slice.values)).toEqual([4, 5, 6, 7]);
    expect(() => axialSlice(grid, 3)).toThrow(/outside/);
  });

  it('windowing maps the slice range onto 0..255 for display only', () => {
    const grid = decodeGrid(encodeGridBytes('RVOL', [2, 1, 1], [1, 1, 1], [0, 10]));
    const levels = windowLevels(axialSlice(grid, 0));
    expect(levels[0]).toBe(0);
    expect(levels[1]).toBe(255);
  });
});
