/**
 * Deterministic mock editor: spectral notch plus a light smooth.
 *
 * Stand-in for the diffusion tier so protocol and pipeline tests run
 * without model weights. It estimates the raster period of a periodic
 * artifact from the image's own spectrum (strongest axis-aligned harmonic
 * per axis), zeroes a 5x5 neighborhood around every harmonic of the
 * detected lattice, applies a 3x3 binomial blur, and clamps to [0, 1].
 * Pure arithmetic end to end, so identical inputs give identical outputs.
 */

import { complexGrid, dft2 } from "./dft.js";
import type { FloatImage } from "./npy.js";

// Frequencies within 4 bins of DC are object content, never a raster
// imprint: a real scan period is a small fraction of the field of view.
const DC_EXCLUSION = 4;
const MIN_POWER_FRACTION = 0.01; // peak must hold >=1% of all AC power
const PEAK_OVER_SIDELOBE = 4; // and dominate the rest of its strip
const NOTCH_HALF = 2; // 5x5 neighborhood

export interface DetectedPeriods {
  periodY?: number;
  periodX?: number;
}

/**
 * Strongest axis-aligned harmonic, if it looks like a raster artifact.
 *
 * Two guards keep texture from being mistaken for a grid: the peak must
 * carry a macroscopic share of the total AC power (raster imprints do,
 * leakage tails from off-axis texture do not), and it must stand clear of
 * the rest of its strip (a smooth image's low-frequency rolloff fills
 * adjacent bins too, a grid harmonic does not).
 */
function axisStripPeak(
  power: Float64Array,
  height: number,
  width: number,
  axis: "y" | "x",
  totalAc: number,
): number | undefined {
  const n = axis === "y" ? height : width;
  const values: { offset: number; p: number }[] = [];
  for (let f = 1; f < n; f++) {
    const offset = f <= n / 2 ? f : f - n;
    if (Math.abs(offset) <= DC_EXCLUSION) continue;
    // sum the three center-most perpendicular bins to catch slight leakage
    let p = 0;
    for (const g of [0, 1, axis === "y" ? width - 1 : height - 1]) {
      const idx = axis === "y" ? f * width + g : g * width + f;
      p += power[idx];
    }
    values.push({ offset: Math.abs(offset), p });
  }
  if (values.length === 0 || totalAc <= 0) return undefined;
  let best = values[0];
  for (const v of values) {
    if (v.p > best.p) best = v;
  }
  let sidelobe = 0;
  for (const v of values) {
    if (Math.abs(v.offset - best.offset) >= 2) sidelobe = Math.max(sidelobe, v.p);
  }
  if (best.p < MIN_POWER_FRACTION * totalAc) return undefined;
  if (best.p < PEAK_OVER_SIDELOBE * sidelobe) return undefined;
  return best.offset;
}

/** Estimate per-axis artifact periods in pixels, if any stand out. */
export function detectGridPeriods(image: FloatImage): DetectedPeriods {
  const { data, height, width } = image;
  const grid = complexGrid(height, width);
  let mean = 0;
  for (let i = 0; i < data.length; i++) mean += data[i];
  mean /= data.length;
  for (let i = 0; i < data.length; i++) grid.re[i] = data[i] - mean;
  dft2(grid);
  const power = new Float64Array(height * width);
  let totalAc = 0;
  for (let i = 0; i < power.length; i++) {
    power[i] = grid.re[i] * grid.re[i] + grid.im[i] * grid.im[i];
    totalAc += power[i];
  }
  totalAc -= power[0]; // mean was subtracted, but keep DC out regardless
  const fy = axisStripPeak(power, height, width, "y", totalAc);
  const fx = axisStripPeak(power, height, width, "x", totalAc);
  return {
    periodY: fy === undefined ? undefined : height / fy,
    periodX: fx === undefined ? undefined : width / fx,
  };
}

function zeroNeighborhood(
  grid: { re: Float64Array; im: Float64Array },
  height: number,
  width: number,
  centerRow: number,
  centerCol: number,
): void {
  const cy = height >> 1;
  const cx = width >> 1;
  for (let r = Math.max(0, centerRow - NOTCH_HALF); r <= Math.min(height - 1, centerRow + NOTCH_HALF); r++) {
    for (let c = Math.max(0, centerCol - NOTCH_HALF); c <= Math.min(width - 1, centerCol + NOTCH_HALF); c++) {
      // (r, c) are centered coordinates; map back to the unshifted layout
      const fy = (r - cy + height) % height;
      const fx = (c - cx + width) % width;
      grid.re[fy * width + fx] = 0;
      grid.im[fy * width + fx] = 0;
    }
  }
}

function notchLattice(
  grid: { re: Float64Array; im: Float64Array },
  height: number,
  width: number,
  periods: DetectedPeriods,
): void {
  const cy = height >> 1;
  const cx = width >> 1;
  const kMax =
    periods.periodY === undefined ? 0 : Math.ceil(height / periods.periodY) + 1;
  const lMax =
    periods.periodX === undefined ? 0 : Math.ceil(width / periods.periodX) + 1;
  for (let k = -kMax; k <= kMax; k++) {
    for (let l = -lMax; l <= lMax; l++) {
      if (k === 0 && l === 0) continue;
      const row =
        cy + (periods.periodY === undefined ? 0 : Math.round((height * k) / periods.periodY));
      const col =
        cx + (periods.periodX === undefined ? 0 : Math.round((width * l) / periods.periodX));
      if (row < 0 || row >= height || col < 0 || col >= width) continue;
      zeroNeighborhood(grid, height, width, row, col);
    }
  }
}

/** Separable 3x3 binomial blur with replicated borders. */
function binomialSmooth(data: Float64Array, height: number, width: number): Float64Array {
  const clamp = (v: number, hi: number) => (v < 0 ? 0 : v > hi ? hi : v);
  const rows = new Float64Array(data.length);
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      rows[r * width + c] =
        0.25 * data[r * width + clamp(c - 1, width - 1)] +
        0.5 * data[r * width + c] +
        0.25 * data[r * width + clamp(c + 1, width - 1)];
    }
  }
  const out = new Float64Array(data.length);
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      out[r * width + c] =
        0.25 * rows[clamp(r - 1, height - 1) * width + c] +
        0.5 * rows[r * width + c] +
        0.25 * rows[clamp(r + 1, height - 1) * width + c];
    }
  }
  return out;
}

/** Run the full surrogate edit on a [0, 1] phase image. */
export function mockEdit(image: FloatImage): FloatImage {
  const { data, height, width } = image;
  const periods = detectGridPeriods(image);

  let working = data;
  if (periods.periodY !== undefined || periods.periodX !== undefined) {
    const grid = complexGrid(height, width);
    let mean = 0;
    for (let i = 0; i < data.length; i++) mean += data[i];
    mean /= data.length;
    for (let i = 0; i < data.length; i++) grid.re[i] = data[i] - mean;
    dft2(grid);
    notchLattice(grid, height, width, periods);
    dft2(grid, true);
    working = new Float64Array(data.length);
    for (let i = 0; i < data.length; i++) working[i] = grid.re[i] + mean;
  }

  const smoothed = binomialSmooth(working, height, width);
  for (let i = 0; i < smoothed.length; i++) {
    smoothed[i] = Math.min(1, Math.max(0, smoothed[i]));
  }
  return { data: smoothed, height, width };
}
