import init, { randomInstance, interpolant, canonicalize, solveBaseline } from "./pkg/cycflow_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("view");
const ctx = canvas.getContext("2d");
let points = new Float64Array();

function pairs(flat, n) {
  const out = [];
  for (let i = 0; i < n; i++) out.push([flat[2 * i], flat[2 * i + 1]]);
  return out;
}

// Fit the cloud into the canvas with a fixed margin; `frame` keeps the scale stable while t moves.
function transform(frame) {
  const xs = frame.map((p) => p[0]);
  const ys = frame.map((p) => p[1]);
  const cx = (Math.min(...xs) + Math.max(...xs)) / 2;
  const cy = (Math.min(...ys) + Math.max(...ys)) / 2;
  const span = Math.max(Math.max(...xs) - Math.min(...xs), Math.max(...ys) - Math.min(...ys)) || 1;
  const s = (canvas.width - 80) / span;
  return ([x, y]) => [canvas.width / 2 + (x - cx) * s, canvas.height / 2 - (y - cy) * s];
}

function draw(pts, order, frame, colour = "#2a6fdb") {
  const map = transform(frame ?? pts);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (order) {
    ctx.strokeStyle = "#bbb";
    ctx.beginPath();
    order.forEach((i, k) => {
      const [x, y] = map(pts[i]);
      k === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.closePath();
    ctx.stroke();
  }
  ctx.fillStyle = colour;
  pts.forEach((p, i) => {
    const [x, y] = map(p);
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(String(i), x + 6, y - 6);
  });
}

function n() {
  return points.length / 2;
}

function showInterpolant() {
  const t = Number($("t").value);
  $("tval").value = t.toFixed(2);
  try {
    const out = interpolant(points, t);
    const start = interpolant(points, 0);
    const end = interpolant(points, 1);
    const k = n();
    const order = Array.from(out.slice(2 * k), Number);
    const frame = pairs(start, k).concat(pairs(end, k));
    draw(pairs(out, k), order, frame);
    $("info").value = "";
  } catch (e) {
    $("info").value = e.message;
  }
}

function regen() {
  points = randomInstance(Number($("n").value), Number($("seed").value));
  $("t").value = 0;
  showInterpolant();
}

$("regen").onclick = regen;
$("t").oninput = showInterpolant;
$("canon").onclick = () => {
  try {
    const out = canonicalize(points);
    const k = n();
    const flags = out[2 * k];
    draw(pairs(out, k), null, null, "#c0392b");
    $("info").value = `canonical pose (labels are canonical positions)${flags ? `, ${flags} tie flag(s) raised` : ""}`;
  } catch (e) {
    $("info").value = e.message;
  }
};
$("solve").onclick = () => {
  try {
    const out = solveBaseline(points);
    const [sorted, refined, reference] = out;
    draw(pairs(points, n()), Array.from(out.slice(3), Number), null, "#27ae60");
    const gap = (l) => ((100 * (l - reference)) / reference).toFixed(2);
    $("info").value =
      `angular sort ${sorted.toFixed(4)} (${gap(sorted)}%), + 2-opt ${refined.toFixed(4)} (${gap(refined)}%), reference ${reference.toFixed(4)}`;
  } catch (e) {
    $("info").value = e.message;
  }
};

await init();
regen();
