// Inline SVG risk trajectory. One point per batch, values exactly as the
// service reported them at submit time; no smoothing, no rescaling of the
// numbers themselves, only a viewport fit.

export function sparklineSvg(values: number[], width = 160, height = 36): string {
  if (values.length === 0) return "";
  const pad = 3;
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = values.length > 1 ? (width - 2 * pad) / (values.length - 1) : 0;
  const points = values
    .map((v, i) => {
      const x = pad + i * step;
      const y = height - pad - ((v - lo) / span) * (height - 2 * pad);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  const dots = values
    .map((v, i) => {
      const x = pad + i * step;
      const y = height - pad - ((v - lo) / span) * (height - 2 * pad);
      return `<circle cx="${x.toFixed(1)}" cy="${y.toFixed(1)}" r="2"></circle>`;
    })
    .join("");
  return (
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" ` +
    `class="sparkline" role="img" aria-label="risk per batch">` +
    `<polyline fill="none" points="${points}"></polyline>${dots}</svg>`
  );
}
