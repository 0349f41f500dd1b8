import init, { kernel_curve, simulate_and_cluster, motif_counts } from "./pkg/mulch_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const numbers = (text) => Float64Array.from(text.split(",").map(Number));

function showError(target, err) {
  target.innerHTML = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = String(err.message ?? err);
  target.appendChild(p);
}

function plotKernel() {
  const canvas = $("k-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  try {
    const tMax = Number($("k-t").value);
    const ys = kernel_curve(numbers($("k-c").value), numbers($("k-b").value), tMax, canvas.width);
    const top = Math.max(...ys);
    ctx.beginPath();
    ys.forEach((y, i) => {
      const py = canvas.height - 4 - (y / top) * (canvas.height - 8);
      i === 0 ? ctx.moveTo(i, py) : ctx.lineTo(i, py);
    });
    ctx.stroke();
    ctx.fillText(`peak ${top.toFixed(3)}, range [0, ${tMax}]`, 8, 12);
  } catch (err) {
    ctx.fillText(String(err.message ?? err), 8, 12);
  }
}

function runCluster() {
  const out = $("s-out");
  const canvas = $("s-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  try {
    const res = JSON.parse(
      simulate_and_cluster(Number($("s-n").value), Number($("s-k").value), Number($("s-t").value), BigInt($("s-seed").value)),
    );
    out.textContent = `${res.n_events} events, spectral ARI ${res.ari.toFixed(3)}`;
    const n = res.counts.length;
    const cell = canvas.width / n;
    const top = Math.max(1, ...res.counts.flat());
    res.counts.forEach((row, i) =>
      row.forEach((v, j) => {
        const shade = 255 - Math.round(255 * Math.sqrt(v / top));
        ctx.fillStyle = `rgb(${shade},${shade},255)`;
        ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
      }),
    );
  } catch (err) {
    showError(out, err);
  }
}

function runMotifs() {
  const out = $("m-out");
  try {
    const res = JSON.parse(motif_counts($("m-csv").value, Number($("m-delta").value)));
    const table = document.createElement("table");
    const head = table.insertRow();
    head.insertCell().textContent = "";
    for (let c = 1; c <= 6; c++) head.insertCell().textContent = `col ${c}`;
    res.counts.forEach((row, r) => {
      const tr = table.insertRow();
      tr.insertCell().textContent = `row ${r + 1}`;
      row.forEach((v) => (tr.insertCell().textContent = v));
    });
    out.innerHTML = "";
    out.appendChild(table);
  } catch (err) {
    showError(out, err);
  }
}

await init();
$("k-run").onclick = plotKernel;
$("s-run").onclick = runCluster;
$("m-run").onclick = runMotifs;
plotKernel();
