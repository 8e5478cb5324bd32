import init, { CityDemo } from "./pkg/streetsafe_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let demo = null;

function color(score) {
  // red (0) through yellow (5) to green (10)
  const t = Math.max(0, Math.min(1, score / 10));
  const r = t < 0.5 ? 220 : Math.round(220 - (t - 0.5) * 2 * 180);
  const g = t < 0.5 ? Math.round(60 + t * 2 * 160) : 220;
  return `rgb(${r},${g},70)`;
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function drawMap(canvas, xy, values, rings) {
  const ctx = clear(canvas);
  const w = canvas.width, h = canvas.height;
  for (let i = 0; i < values.length; i++) {
    ctx.fillStyle = color(values[i]);
    ctx.fillRect(xy[3 * i] * (w - 4), (1 - xy[3 * i + 1]) * (h - 4), 4, 4);
  }
  if (rings) {
    ctx.strokeStyle = "rgba(0,0,0,.45)";
    for (let i = 0; i < rings.length; i += 3) {
      ctx.beginPath();
      ctx.arc(rings[i] * (w - 4) + 2, (1 - rings[i + 1]) * (h - 4) + 2, 3, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }
}

function drawCurve(canvas, rows) {
  const ctx = clear(canvas);
  const w = canvas.width, h = canvas.height, pad = 30;
  const r2 = rows.map((r) => r.r2 ?? 0);
  const lo = Math.min(0, ...r2), hi = 1;
  const x = (k) => pad + ((k - 1) / Math.max(1, rows.length - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(hi.toFixed(1), 4, y(hi) + 4);
  ctx.fillText(lo.toFixed(1), 4, y(lo));
  ctx.fillText("K=1", pad, h - 10);
  ctx.fillText(`K=${rows.length}`, w - pad - 24, h - 10);
  ctx.strokeStyle = "#2c6fbb";
  ctx.beginPath();
  rows.forEach((r, i) => (i ? ctx.lineTo(x(r.k), y(r2[i])) : ctx.moveTo(x(r.k), y(r2[i]))));
  ctx.stroke();
  ctx.fillStyle = "#2c6fbb";
  rows.forEach((r, i) => ctx.fillRect(x(r.k) - 2, y(r2[i]) - 2, 4, 4));
}

function status(text) {
  $("status").textContent = text;
}

function timed(label, f) {
  const t = performance.now();
  const out = f();
  return [out, `${label} in ${Math.round(performance.now() - t)} ms`];
}

function run() {
  try {
    demo?.free();
    let note;
    [demo, note] = timed("tournament", () =>
      new CityDemo(num("seed"), num("points"), num("anchors"), num("opponents"), num("noise")));
    const pts = demo.points();
    drawMap($("latent"), pts, pts.filter((_, i) => i % 3 === 2), demo.anchors());
    clear($("predicted"));
    clear($("curve"));
    $("score").disabled = $("sweep").disabled = false;
    status(`${demo.pairs()} pairs judged, ${note}\nSpearman(tournament, hidden safety) = ${demo.spearman().toFixed(4)}`);
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

function score() {
  try {
    const k = num("k");
    const [values, note] = timed("scored", () => demo.score(k));
    drawMap($("predicted"), demo.points(), values);
    const h = JSON.parse(demo.held_out(k));
    status(`K=${k}: held-out R² ${h.r2?.toFixed(4) ?? "undefined"}, MAE ${h.mae.toFixed(4)}; ${note}`);
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

function sweep() {
  try {
    const [rows, note] = timed("swept", () => JSON.parse(demo.ablation(num("kmax"))));
    drawCurve($("curve"), rows);
    const best = rows.reduce((a, b) => ((b.r2 ?? -Infinity) > (a.r2 ?? -Infinity) ? b : a));
    status(`best K=${best.k} (R² ${best.r2.toFixed(4)}), K=1 R² ${rows[0].r2.toFixed(4)}; ${note}`);
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

$("k").addEventListener("input", () => ($("kval").value = $("k").value));
$("run").addEventListener("click", run);
$("score").addEventListener("click", score);
$("sweep").addEventListener("click", sweep);

await init();
status("ready: run a tournament");
