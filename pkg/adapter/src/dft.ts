/**
 * Direct 2D discrete Fourier transform for small images.
 *
 * The mock editor works on reconstruction-sized phase images (typically
 * 256x256 or less), where an O(n^2)-per-row transform is entirely adequate
 * and supports every length, not just powers of two. Twiddle tables are
 * cached per length; a 256x256 round trip stays well under a second.
 */

export interface ComplexGrid {
  re: Float64Array;
  im: Float64Array;
  height: number;
  width: number;
}

export function complexGrid(height: number, width: number): ComplexGrid {
  return {
    re: new Float64Array(height * width),
    im: new Float64Array(height * width),
    height,
    width,
  };
}

const twiddleCache = new Map<number, { cos: Float64Array; sin: Float64Array }>();

function twiddles(n: number) {
  let entry = twiddleCache.get(n);
  if (!entry) {
    const cos = new Float64Array(n);
    const sin = new Float64Array(n);
    for (let m = 0; m < n; m++) {
      cos[m] = Math.cos((-2 * Math.PI * m) / n);
      sin[m] = Math.sin((-2 * Math.PI * m) / n);
    }
    entry = { cos, sin };
    twiddleCache.set(n, entry);
  }
  return entry;
}

/** One line of length n starting at `offset` with the given stride. */
function dftLine(
  re: Float64Array,
  im: Float64Array,
  offset: number,
  stride: number,
  n: number,
  inverse: boolean,
): void {
  const { cos, sin } = twiddles(n);
  const outRe = new Float64Array(n);
  const outIm = new Float64Array(n);
  const sign = inverse ? -1 : 1;
  for (let k = 0; k < n; k++) {
    let sumRe = 0;
    let sumIm = 0;
    let m = 0; // (j * k) mod n, accumulated to avoid multiplication overflow
    for (let j = 0; j < n; j++) {
      const c = cos[m];
      const s = sign * sin[m];
      const xr = re[offset + j * stride];
      const xi = im[offset + j * stride];
      sumRe += xr * c - xi * s;
      sumIm += xr * s + xi * c;
      m += k;
      if (m >= n) m -= n;
    }
    outRe[k] = sumRe;
    outIm[k] = sumIm;
  }
  const scale = inverse ? 1 / n : 1;
  for (let k = 0; k < n; k++) {
    re[offset + k * stride] = outRe[k] * scale;
    im[offset + k * stride] = outIm[k] * scale;
  }
}

/** In-place 2D DFT (rows then columns); `inverse` includes the 1/(hw) scale. */
export function dft2(grid: ComplexGrid, inverse = false): void {
  const { re, im, height, width } = grid;
  for (let r = 0; r < height; r++) {
    dftLine(re, im, r * width, 1, width, inverse);
  }
  for (let c = 0; c < width; c++) {
    dftLine(re, im, c, width, height, inverse);
  }
}
