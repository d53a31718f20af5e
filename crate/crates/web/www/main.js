import init, { outcomeCurves, compareTransport, symmetryCurve } from "./pkg/cita_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, xs, series, yLabel) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 36;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.ys);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  let y0 = Math.min(0, ...ys), y1 = Math.max(...ys);
  if (y1 === y0) y1 = y0 + 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  ctx.fillText(String(x0), pad, h - pad + 14);
  ctx.fillText(String(x1), w - pad - 10, h - pad + 14);
  ctx.fillText(yLabel, pad + 4, pad - 6);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(s.ys[i])) : ctx.moveTo(px(x), py(s.ys[i]))));
    ctx.stroke();
    if (s.dots) {
      ctx.fillStyle = s.color;
      xs.forEach((x, i) => ctx.fillRect(px(x) - 2, py(s.ys[i]) - 2, 4, 4));
    }
  }
}

function triples(flat) {
  const a = [], b = [], c = [];
  for (let i = 0; i < flat.length; i += 3) {
    a.push(flat[i]);
    b.push(flat[i + 1]);
    c.push(flat[i + 2]);
  }
  return [a, b, c];
}

function drawCurves() {
  try {
    const flat = outcomeCurves($("c-family").value, num("c-a"), num("c-b"), num("c-u"), 200);
    const [u, y0, y1] = triples(flat);
    plot($("c-canvas"), u, [{ ys: y0, color: "#1f77b4" }, { ys: y1, color: "#d62728" }], "outcome");
    $("c-out").textContent = `ITE at u=1: ${(outcomeCurves($("c-family").value, num("c-a"), num("c-b"), 1, 2)[5] -
      outcomeCurves($("c-family").value, num("c-a"), num("c-b"), 1, 2)[4]).toFixed(4)}`;
  } catch (e) {
    $("c-out").textContent = String(e);
  }
}

const clouds = { p: [], q: [] };

function drawClouds() {
  const c = $("t-canvas"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  for (const [pts, color] of [[clouds.p, "#1f77b4"], [clouds.q, "#ff7f0e"]]) {
    ctx.fillStyle = color;
    for (let i = 0; i < pts.length; i += 2) ctx.fillRect(pts[i] * c.width - 3, pts[i + 1] * c.height - 3, 6, 6);
  }
  if (!clouds.p.length || !clouds.q.length) {
    $("t-out").textContent = "add points to both clouds";
    return;
  }
  try {
    const t = performance.now();
    const [cost, dual, exact] = compareTransport(new Float64Array(clouds.p), new Float64Array(clouds.q), num("t-eps"), num("t-iters"));
    const ms = (performance.now() - t).toFixed(1);
    $("t-out").textContent =
      `sinkhorn cost ${cost.toFixed(5)}  dual ${dual.toFixed(5)}\n` +
      `exact W1      ${exact.toFixed(5)}  relative gap ${((cost - exact) / exact * 100).toFixed(2)}%  (${ms} ms)`;
  } catch (e) {
    $("t-out").textContent = String(e);
  }
}

function randomClouds() {
  const gauss = () => Math.sqrt(-2 * Math.log(1 - Math.random())) * Math.cos(2 * Math.PI * Math.random());
  const make = (cx, cy) => Array.from({ length: 40 }, () => [cx + 0.08 * gauss(), cy + 0.08 * gauss()]).flat()
    .map((v) => Math.min(0.99, Math.max(0.01, v)));
  clouds.p = make(0.35, 0.4);
  clouds.q = make(0.6, 0.6);
  drawClouds();
}

function runSymmetry() {
  $("s-out").textContent = "training...";
  setTimeout(() => {
    try {
      const grid = new Float64Array(Array.from({ length: 11 }, (_, i) => i / 10));
      const t = performance.now();
      const flat = symmetryCurve(num("s-k"), num("s-n"), num("s-epochs"), BigInt(num("s-seed")), grid);
      const [p, sym, ident] = triples(flat);
      plot($("s-canvas"), p, [{ ys: sym, color: "#2ca02c", dots: true }, { ys: ident, color: "#9467bd", dots: true }], "distance");
      $("s-out").textContent = p.map((v, i) => `p=${v.toFixed(1)}  d_sym ${sym[i].toFixed(4)}  d_identity ${ident[i].toFixed(4)}`).join("\n") +
        `\n(${((performance.now() - t) / 1000).toFixed(1)} s)`;
    } catch (e) {
      $("s-out").textContent = String(e);
    }
  }, 10);
}

await init();
for (const id of ["c-family", "c-a", "c-b", "c-u"]) $(id).addEventListener("input", drawCurves);
for (const id of ["t-eps", "t-iters"]) $(id).addEventListener("change", drawClouds);
$("t-canvas").addEventListener("click", (ev) => {
  const r = ev.target.getBoundingClientRect();
  const pt = [(ev.clientX - r.left) / r.width, (ev.clientY - r.top) / r.height];
  (ev.shiftKey ? clouds.q : clouds.p).push(...pt);
  drawClouds();
});
$("t-random").addEventListener("click", randomClouds);
$("t-clear").addEventListener("click", () => { clouds.p = []; clouds.q = []; drawClouds(); });
$("s-run").addEventListener("click", runSymmetry);
drawCurves();
randomClouds();
