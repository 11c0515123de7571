import init, { Demo } from "./pkg/gsjbu_web.js";

const $ = (id) => document.getElementById(id);
const status = (msg) => { $("status").textContent = msg; };
const MAX_SIDE = 256;

let pixels = null;   // { data, width, height }
let demo = null;

function paint(id, rgba, w, h) {
  const c = $(id);
  c.width = w;
  c.height = h;
  c.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function loadBitmap(source, w, h) {
  const scale = Math.min(1, MAX_SIDE / Math.max(w, h));
  const c = document.createElement("canvas");
  c.width = Math.round(w * scale);
  c.height = Math.round(h * scale);
  const ctx = c.getContext("2d");
  ctx.drawImage(source, 0, 0, c.width, c.height);
  pixels = ctx.getImageData(0, 0, c.width, c.height);
  rebuild();
}

function syntheticSample() {
  const c = document.createElement("canvas");
  c.width = c.height = 192;
  const ctx = c.getContext("2d");
  const grad = ctx.createLinearGradient(0, 0, 192, 192);
  grad.addColorStop(0, "#f3d9a4");
  grad.addColorStop(1, "#3b6ea5");
  ctx.fillStyle = grad;
  ctx.fillRect(0, 0, 192, 192);
  ctx.fillStyle = "#c0392b";
  ctx.beginPath();
  ctx.arc(70, 80, 42, 0, Math.PI * 2);
  ctx.fill();
  ctx.fillStyle = "#1e272e";
  ctx.save();
  ctx.translate(135, 125);
  ctx.rotate(0.5);
  ctx.fillRect(-50, -12, 100, 24);
  ctx.restore();
  loadBitmap(c, 192, 192);
}

function rebuild() {
  if (!pixels) return;
  try {
    demo?.free();
    demo = new Demo(new Uint8Array(pixels.data.buffer), pixels.width, pixels.height, Number($("scale").value));
    const [w, h] = [demo.width(), demo.height()];
    paint("input", demo.view("input"), w, h);
    paint("lowres", demo.view("lowres"), w, h);
    for (const id of ["learned", "bilinear", "jbu"]) { $(id).width = w; $(id).height = h; }
    $("scores").innerHTML = "";
    status(`${w}x${h} guidance, ${w / Number($("scale").value)}x${h / Number($("scale").value)} low-res grid`);
  } catch (e) {
    status(String(e));
  }
}

function plotLoss(losses) {
  const c = $("loss");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const lo = Math.min(...losses), hi = Math.max(...losses);
  const span = hi - lo || 1;
  ctx.strokeStyle = "#2c3e50";
  ctx.beginPath();
  losses.forEach((l, i) => {
    const x = 10 + (i / Math.max(1, losses.length - 1)) * (c.width - 20);
    const y = 10 + (1 - (l - lo) / span) * (c.height - 20);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(`L1 loss ${losses[0].toFixed(4)} -> ${Math.min(...losses).toFixed(4)}`, 12, 14);
}

function runFit() {
  if (!demo) return status("load an image first");
  status("fitting...");
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const losses = demo.fit(Number($("iters").value), Number($("lr").value));
      const ms = performance.now() - t0;
      paint("learned", demo.view("learned"), demo.width(), demo.height());
      plotLoss(Array.from(losses));
      status(`fit in ${ms.toFixed(0)} ms`);
    } catch (e) {
      status(String(e));
    }
  }, 10);
}

function runCompare() {
  if (!demo) return status("load an image first");
  const [w, h] = [demo.width(), demo.height()];
  for (const id of ["learned", "bilinear", "jbu"]) paint(id, demo.view(id), w, h);
  const [ours, bil, jbu] = demo.compare();
  $("scores").innerHTML =
    "<tr><th>method</th><th>PSNR (dB)</th></tr>" +
    [["learned", ours], ["bilinear", bil], ["classic JBU", jbu]]
      .map(([n, v]) => `<tr><td>${n}</td><td>${v.toFixed(2)}</td></tr>`).join("");
}

function drawKernels() {
  if (!demo) return status("load an image first");
  const e = demo.ellipses();
  const ctx = $("learned").getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(demo.view("learned")), demo.width(), demo.height()), 0, 0);
  ctx.strokeStyle = "rgba(255,255,255,0.8)";
  ctx.lineWidth = 0.7;
  for (let i = 0; i < e.length; i += 6) {
    // one-sigma contour, scaled down so neighbours stay readable
    ctx.beginPath();
    ctx.ellipse(e[i], e[i + 1], 0.35 * e[i + 2], 0.35 * e[i + 3], e[i + 4], 0, Math.PI * 2);
    ctx.stroke();
  }
}

await init();
$("file").addEventListener("change", async (ev) => {
  const f = ev.target.files[0];
  if (!f) return;
  const bmp = await createImageBitmap(f);
  loadBitmap(bmp, bmp.width, bmp.height);
});
$("sample").addEventListener("click", syntheticSample);
$("scale").addEventListener("change", rebuild);
$("fit").addEventListener("click", runFit);
$("compare").addEventListener("click", runCompare);
$("kernels").addEventListener("click", drawKernels);
syntheticSample();
