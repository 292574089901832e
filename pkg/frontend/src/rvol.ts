// Client-side decoding of the service's raw voxel containers.
//
// Layout (little-endian): magic(4) | u32 version | u32 nx,ny,nz |
// f32 sx,sy,sz | payload. "RVOL" payloads are f32 intensities, "RMSK" u8
// labels, both x-fastest: index = x + nx * (y + ny * z).

export interface VoxelGrid {
  kind: 'volume' | 'mask';
  dims: [number, number, number];
  spacing: [number, number, number];
  data: Float32Array | Uint8Array;
}

const HEADER_BYTES = 32;

export function decodeGrid(buffer: ArrayBuffer): VoxelGrid {
  if (buffer.byteLength < HEADER_BYTES) {
    throw new Error(`container too short: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  const magic = String.fromCharCode(
    view.getUint8(0),
    view.getUint8(1),
    view.getUint8(2),
    view.getUint8(3),
  );
  if (magic !== 'RVOL' && magic !== 'RMSK') {
    throw new Error(`bad magic ${JSON.stringify(magic)}`);
  }
  const version = view.getUint32(4, true);
  if (version !== 1) throw new Error(`unsupported container version ${version}`);
  const nx = view.getUint32(8, true);
  const ny = view.getUint32(12, true);
  const nz = view.getUint32(16, true);
  const spacing: [number, number, number] = [
    view.getFloat32(20, true),
    view.getFloat32(24, true),
    view.getFloat32(28, true),
  ];
  const count = nx * ny * nz;
  const itemSize = magic === 'RVOL' ? 4 : 1;
  if (buffer.byteLength !== HEADER_BYTES + count * itemSize) {
    throw new Error(
      `payload mismatch: declared ${count} voxels, got ${buffer.byteLength - HEADER_BYTES} bytes`,
    );
  }
  const data =
    magic === 'RVOL'
      ? new Float32Array(buffer, HEADER_BYTES, count)
      : new Uint8Array(buffer, HEADER_BYTES, count);
  return { kind: magic === 'RVOL' ? 'volume' : 'mask', dims: [nx, ny, nz], spacing, data };
}

export function voxelAt(grid: VoxelGrid, x: number, y: number, z: number): number {
  const [nx, ny] = [grid.dims[0], grid.dims[1]];
  return grid.data[x + nx * (y + ny * z)] as number;
}

export interface Slice {
  width: number; // x extent
  height: number; // y extent
  z: number;
  values: Float32Array;
}

export function axialSlice(grid: VoxelGrid, z: number): Slice {
  const [nx, ny, nz] = grid.dims;
  if (z < 0 || z >= nz) throw new Error(`slice ${z} outside [0, ${nz})`);
  const values = new Float32Array(nx * ny);
  const offset = nx * ny * z;
  for (let i = 0; i < nx * ny; i++) {
    values[i] = grid.data[offset + i] as number;
  }
  return { width: nx, height: ny, z, values };
}

// Display-only grayscale windowing: maps a slice to 0..255 using the given
// window (defaults to the slice's own range). Never persisted or sent back.
export function windowLevels(
  slice: Slice,
  lo?: number,
  hi?: number,
): Uint8ClampedArray {
  let min = lo;
  let max = hi;
  if (min === undefined || max === undefined) {
    min = Infinity;
    max = -Infinity;
    for (const v of slice.values) {
      if (v < min) min = v;
      if (v > max) max = v;
    }
  }
  const span = max - min || 1;
  const out = new Uint8ClampedArray(slice.values.length);
  for (let i = 0; i < slice.values.length; i++) {
    out[i] = (((slice.values[i] as number) - min) / span) * 255;
  }
  return out;
}
