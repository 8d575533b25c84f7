import init, { beltrami_map, geodesics, check_metrisability } from "./pkg/metrise_wasm.js";

const $ = (id) => document.getElementById(id);

function hsl(h, s, l) {
  // h in [0, 1), s and l in [0, 1]; returns [r, g, b] bytes
  const k = (n) => (n + h * 12) % 12;
  const a = s * Math.min(l, 1 - l);
  const f = (n) => l - a * Math.max(-1, Math.min(k(n) - 3, 9 - k(n), 1));
  return [f(0), f(8), f(4)].map((v) => Math.round(255 * v));
}

function viridisish(t) {
  t = Math.max(0, Math.min(1, t));
  return [Math.round(255 * t), Math.round(200 * Math.sqrt(t) + 30 * (1 - t)), Math.round(120 * (1 - t) + 60)];
}

// ---- matrix A ----

const cells = [];
function buildMatrix() {
  const box = $("matrix");
  for (let i = 0; i < 3; i++) {
    const row = document.createElement("div");
    for (let j = 0; j < 3; j++) {
      const inp = document.createElement("input");
      inp.type = "number";
      inp.step = "0.1";
      inp.value = i === j ? "1" : "0";
      inp.addEventListener("change", redrawSphere);
      row.appendChild(inp);
      cells.push(inp);
    }
    box.appendChild(row);
  }
}

const matrixA = () => new Float64Array(cells.map((c) => parseFloat(c.value) || 0));

function setMatrix(values) {
  values.forEach((v, k) => (cells[k].value = v.toFixed(2)));
  redrawSphere();
}

// ---- Beltrami heatmap ----

function drawMu() {
  const canvas = $("mu");
  const ctx = canvas.getContext("2d");
  const [nlat, nlon] = [90, 180];
  let mu;
  try {
    mu = beltrami_map(matrixA(), nlat, nlon);
  } catch (e) {
    $("mu-stats").innerHTML = `<span class="err">${e.message ?? e}</span>`;
    return;
  }
  const img = ctx.createImageData(nlon, nlat);
  let max = 0;
  for (let i = 0; i < nlat; i++) {
    for (let j = 0; j < nlon; j++) {
      const k = i * nlon + j;
      const [re, im] = [mu[2 * k], mu[2 * k + 1]];
      const abs = Math.hypot(re, im);
      max = Math.max(max, abs);
      const hue = (Math.atan2(im, re) / (2 * Math.PI) + 1) % 1;
      const [r, g, b] = hsl(hue, 0.9, 0.5 * Math.min(1, abs / 0.5));
      const p = 4 * ((nlat - 1 - i) * nlon + j); // north at the top
      img.data.set([r, g, b, 255], p);
    }
  }
  const off = new OffscreenCanvas(nlon, nlat);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  $("mu-stats").textContent = `max |μ| = ${max.toFixed(4)}`;
}

// ---- geodesics on the sphere ----

function drawGeodesics() {
  const canvas = $("sphere");
  const ctx = canvas.getContext("2d");
  const stretch = parseFloat($("stretch").value);
  $("stretch-value").textContent = stretch.toFixed(2);
  const count = Math.max(1, Math.min(12, parseInt($("count").value) || 1));
  let traces;
  try {
    traces = JSON.parse(geodesics(matrixA(), stretch, count, 1));
  } catch (e) {
    $("planarity").innerHTML = `<span class="err">${e.message ?? e}</span>`;
    return;
  }
  const yaw = parseFloat($("yaw").value);
  const tilt = 0.4;
  const [cy, sy, ct, st] = [Math.cos(yaw), Math.sin(yaw), Math.cos(tilt), Math.sin(tilt)];
  // orthographic view: rotate about z by yaw, then about x by tilt
  const view = ([x, y, z]) => {
    const x1 = cy * x - sy * y;
    const y1 = sy * x + cy * y;
    return [x1, ct * z - st * y1, st * z + ct * y1];
  };
  const R = canvas.width / 2 - 10;
  const c = canvas.width / 2;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.arc(c, c, R, 0, 2 * Math.PI);
  ctx.stroke();
  const lines = [];
  traces.forEach((t, k) => {
    const [r, g, b] = hsl(k / traces.length, 0.8, 0.45);
    for (let i = 1; i < t.points.length; i++) {
      const p = view(t.points[i - 1]);
      const q = view(t.points[i]);
      const front = p[2] < 0 && q[2] < 0;
      ctx.strokeStyle = `rgba(${r},${g},${b},${front ? 1 : 0.2})`;
      ctx.lineWidth = front ? 2 : 1;
      ctx.beginPath();
      ctx.moveTo(c + R * p[0], c - R * p[1]);
      ctx.lineTo(c + R * q[0], c - R * q[1]);
      ctx.stroke();
    }
    lines.push(`geodesic ${k}: max |n·x| = ${t.planarity.toExponential(2)}`);
  });
  $("planarity").textContent =
    lines.join("\n") + "\n" + (stretch === 0 ? "great circles: planarity at roundoff" : "stretched: traces leave their plane");
}

function redrawSphere() {
  drawMu();
  drawGeodesics();
}

// ---- metrisability ----

function drawGrid(canvas, values, nx, ny, scale) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(nx, ny);
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      const v = values[j * nx + i];
      const [r, g, b] = viridisish(scale > 0 ? v / scale : 0);
      img.data.set([r, g, b, 255], 4 * ((ny - 1 - j) * nx + i)); // y up
    }
  }
  const off = new OffscreenCanvas(nx, ny);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function runCheck() {
  let res;
  try {
    res = JSON.parse(
      check_metrisability(
        $("g11").value, $("g12").value, $("g22").value, $("conn").value,
        parseFloat($("half").value), parseInt($("n").value),
      ),
    );
  } catch (e) {
    $("verdict").innerHTML = `<span class="err">${e.message ?? e}</span>`;
    return;
  }
  const scale = Math.max(res.sup_a, res.sup_b, 1e-6);
  drawGrid($("abs-a"), res.abs_a, res.nx, res.ny, scale);
  drawGrid($("abs-b"), res.abs_b, res.nx, res.ny, scale);
  $("verdict").innerHTML =
    `<b>${res.verdict ? "metrisable by g" : "not metrisable by g"}</b><br>` +
    `sup |a| = ${res.sup_a.toExponential(3)}, sup |b| = ${res.sup_b.toExponential(3)}`;
}

// ---- wiring ----

await init();
buildMatrix();
$("identity").addEventListener("click", () => setMatrix([1, 0, 0, 0, 1, 0, 0, 0, 1]));
$("random").addEventListener("click", () =>
  setMatrix([0, 1, 2, 3, 4, 5, 6, 7, 8].map((k) => (k % 4 === 0 ? 1 : 0) + (Math.random() - 0.5) * 0.8)),
);
$("stretch").addEventListener("input", drawGeodesics);
$("yaw").addEventListener("input", drawGeodesics);
$("count").addEventListener("change", drawGeodesics);
$("check").addEventListener("click", runCheck);
redrawSphere();
runCheck();
