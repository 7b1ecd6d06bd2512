// Minimal SVG strip charts. Continuous signals draw as polylines; sampler
// outputs draw with step-after interpolation (hold the value until the next
// point), never linearly interpolated.

const SVG_NS = "http://www.w3.org/2000/svg";

export type Scale = (v: number) => number;

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

function fmt(v: number): string {
  return Number.isInteger(v) ? String(v) : v.toFixed(2);
}

export function linePath(xs: ArrayLike<number>, ys: ArrayLike<number>,
                         sx: Scale, sy: Scale): string {
  if (xs.length === 0) return "";
  let d = `M${fmt(sx(xs[0]))} ${fmt(sy(ys[0]))}`;
  for (let i = 1; i < xs.length; i++) {
    d += ` L${fmt(sx(xs[i]))} ${fmt(sy(ys[i]))}`;
  }
  return d;
}

// Step-after: from (x_i, y_i) go horizontally to x_{i+1}, then vertically
// to y_{i+1}. "H" and "V" segments make the interpolation style assertable.
export function stepAfterPath(xs: ArrayLike<number>, ys: ArrayLike<number>,
                              sx: Scale, sy: Scale): string {
  if (xs.length === 0) return "";
  let d = `M${fmt(sx(xs[0]))} ${fmt(sy(ys[0]))}`;
  for (let i = 1; i < xs.length; i++) {
    d += ` H${fmt(sx(xs[i]))} V${fmt(sy(ys[i]))}`;
  }
  return d;
}

export interface SeriesSpec {
  key: string;
  label: string;
  color: string;
  interpolation: "linear" | "step";
}

export interface ChartOptions {
  width?: number;
  height?: number;
  margin?: number;
  yLabel?: string;
}

export class StripChart {
  readonly svg: SVGSVGElement;
  private readonly paths = new Map<string, SVGPathElement>();
  private readonly series: SeriesSpec[];
  private readonly width: number;
  private readonly height: number;
  private readonly margin: number;

  constructor(doc: Document, series: SeriesSpec[], opts: ChartOptions = {}) {
    this.series = series;
    this.width = opts.width ?? 560;
    this.height = opts.height ?? 220;
    this.margin = opts.margin ?? 34;
    this.svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
    this.svg.setAttribute("viewBox", `0 0 ${this.width} ${this.height}`);
    this.svg.setAttribute("class", "strip-chart");

    const frame = doc.createElementNS(SVG_NS, "rect");
    frame.setAttribute("x", String(this.margin));
    frame.setAttribute("y", "6");
    frame.setAttribute("width", String(this.width - this.margin - 8));
    frame.setAttribute("height", String(this.height - this.margin - 6));
    frame.setAttribute("class", "chart-frame");
    this.svg.appendChild(frame);

    if (opts.yLabel) {
      const label = doc.createElementNS(SVG_NS, "text");
      label.setAttribute("x", "4");
      label.setAttribute("y", "16");
      label.setAttribute("class", "chart-label");
      label.textContent = opts.yLabel;
      this.svg.appendChild(label);
    }

    for (const spec of series) {
      const path = doc.createElementNS(SVG_NS, "path") as SVGPathElement;
      path.setAttribute("data-series", spec.key);
      path.setAttribute("data-interpolation", spec.interpolation);
      path.setAttribute("fill", "none");
      path.setAttribute("stroke", spec.color);
      path.setAttribute("stroke-width", "1.5");
      this.svg.appendChild(path);
      this.paths.set(spec.key, path);
    }
  }

  render(data: Record<string, ArrayLike<number>>, xKey = "t"): void {
    const xs = data[xKey] ?? [];
    if (xs.length === 0) {
      for (const path of this.paths.values()) path.setAttribute("d", "");
      return;
    }
    let xMin = Infinity, xMax = -Infinity;
    for (let i = 0; i < xs.length; i++) {
      if (xs[i] < xMin) xMin = xs[i];
      if (xs[i] > xMax) xMax = xs[i];
    }
    let yMin = Infinity, yMax = -Infinity;
    for (const spec of this.series) {
      const ys = data[spec.key];
      if (!ys || ys.length === 0) continue;
      for (let i = 0; i < ys.length; i++) {
        if (ys[i] < yMin) yMin = ys[i];
        if (ys[i] > yMax) yMax = ys[i];
      }
    }
    if (yMin === Infinity) { yMin = 0; yMax = 1; }
    const pad = (yMax - yMin || 1) * 0.08;
    const sx = linearScale(xMin, xMax, this.margin, this.width - 8);
    const sy = linearScale(yMin - pad, yMax + pad, this.height - this.margin, 6);

    for (const spec of this.series) {
      const path = this.paths.get(spec.key)!;
      const ys = data[spec.key];
      if (!ys || ys.length === 0) {
        path.setAttribute("d", "");
        continue;
      }
      const d = spec.interpolation === "step"
        ? stepAfterPath(xs, ys, sx, sy)
        : linePath(xs, ys, sx, sy);
      path.setAttribute("d", d);
    }
  }
}
