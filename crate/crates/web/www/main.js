import init, { demo_scene, fps, knn, attention_weights } from "./pkg/point_transformer_web.js";

const CLASS_COLORS = ["#4e79a7", "#59a14f", "#e15759"];
const canvas = document.getElementById("view");
const ctx = canvas.getContext("2d");
const $ = (id) => document.getElementById(id);

let xyz = new Float64Array();
let labels = new Uint32Array();
let query = 0;
let yaw = 0.6;
let projected = [];

function generate() {
  const flat = demo_scene(Number($("n").value), BigInt($("seed").value));
  const n = flat.length / 4;
  xyz = new Float64Array(3 * n);
  labels = new Uint32Array(n);
  for (let i = 0; i < n; i++) {
    xyz.set(flat.subarray(4 * i, 4 * i + 3), 3 * i);
    labels[i] = flat[4 * i + 3];
  }
  query = 0;
}

function project() {
  const n = labels.length;
  const c = Math.cos(yaw), s = Math.sin(yaw);
  const scale = canvas.height / 4;
  projected = new Array(n);
  for (let i = 0; i < n; i++) {
    const [x, y, z] = xyz.subarray(3 * i, 3 * i + 3);
    const rx = c * x - s * y;
    const depth = s * x + c * y;
    projected[i] = { u: canvas.width / 2 + scale * rx, v: canvas.height * 0.55 - scale * (z - 0.35 * depth), depth };
  }
}

function dot(i, color, r) {
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(projected[i].u, projected[i].v, r, 0, 2 * Math.PI);
  ctx.fill();
}

function draw() {
  project();
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const order = [...projected.keys()].sort((a, b) => projected[b].depth - projected[a].depth);
  const op = document.querySelector("input[name=op]:checked").value;
  const k = Number($("k").value);
  $("status").textContent = "";
  try {
    if (op === "fps") {
      for (const i of order) dot(i, CLASS_COLORS[labels[i]] + "55", 2);
      const picked = fps(xyz, Number($("m").value), query);
      picked.forEach((i, rank) => dot(i, `hsl(${(300 * rank) / picked.length}, 80%, 40%)`, 4));
    } else if (op === "knn") {
      for (const i of order) dot(i, CLASS_COLORS[labels[i]] + "55", 2);
      for (const i of knn(xyz, query, k)) dot(i, "#000", 4);
      dot(query, "#f28e2b", 6);
    } else {
      for (const i of order) dot(i, CLASS_COLORS[labels[i]] + "33", 2);
      const nbrs = knn(xyz, query, k);
      const w = attention_weights(xyz, labels, query, k, $("operator").value, BigInt($("seed").value));
      const top = Math.max(...w);
      nbrs.forEach((i, j) => dot(i, `rgba(200, 30, 30, ${0.15 + 0.85 * (w[j] / top)})`, 3 + 5 * (w[j] / top)));
      dot(query, "#000", 3);
    }
  } catch (e) {
    $("status").textContent = String(e.message ?? e);
  }
}

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const u = ev.clientX - rect.left, v = ev.clientY - rect.top;
  let best = Infinity;
  projected.forEach((p, i) => {
    const d = (p.u - u) ** 2 + (p.v - v) ** 2;
    if (d < best) { best = d; query = i; }
  });
  draw();
});

let dragX = null;
canvas.addEventListener("mousedown", (ev) => { dragX = ev.clientX; });
window.addEventListener("mouseup", () => { dragX = null; });
canvas.addEventListener("mousemove", (ev) => {
  if (dragX === null) return;
  yaw += (ev.clientX - dragX) * 0.01;
  dragX = ev.clientX;
  draw();
});

$("regen").addEventListener("click", () => {
  try { generate(); draw(); } catch (e) { $("status").textContent = String(e.message ?? e); }
});
for (const el of document.querySelectorAll("input[name=op], #m, #k, #operator")) el.addEventListener("change", draw);

await init();
generate();
draw();
