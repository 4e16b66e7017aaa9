import init, { Demo } from "./pkg/splatloc_web.js";

const $ = (id) => document.getElementById(id);

function draw(canvas, rgba, w, h) {
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
  return ctx;
}

function params() {
  return { index: Number($("index").value), axis: $("axis").value, offset: Number($("offset").value) };
}

function updateOffsetRange(demo) {
  const yaw = $("axis").value === "yaw";
  const limit = demo.limit($("axis").value);
  const slider = $("offset");
  slider.min = (-1.8 * limit).toFixed(2);
  slider.max = (1.8 * limit).toFixed(2);
  slider.step = yaw ? "1" : "0.05";
  if (Math.abs(Number(slider.value)) > 1.8 * limit) slider.value = (0.5 * limit).toFixed(2);
}

function showViews(demo) {
  const { index, axis, offset } = params();
  const w = demo.width(), h = demo.height();
  $("offset-value").textContent = offset;
  draw($("query"), demo.render_view(index, axis, 0, true), w, h);
  draw($("init"), demo.render_view(index, axis, offset, false), w, h);
}

function localize(demo) {
  const { index, axis, offset } = params();
  const out = JSON.parse(
    demo.localize(index, axis, offset, $("method").value, Number($("noise").value), Number($("outliers").value), BigInt(index)),
  );
  const w = demo.width(), h = demo.height();
  const ctx = draw($("init"), demo.render_view(index, axis, offset, false), w, h);
  const inliers = new Set(out.inliers);
  out.matches.forEach(([, , x, y], i) => {
    ctx.fillStyle = inliers.has(i) ? "#3f3" : "#f33";
    ctx.fillRect(Math.round(x), Math.round(y), 1, 1);
  });
  $("report").textContent =
    `status ${out.status}, ${out.n_inliers}/${out.n_matches} inliers, ${out.render_count} rendered frame(s), ${out.time_ms.toFixed(1)} ms\n` +
    `before: RE ${out.before.re_deg.toFixed(3)} deg, TE ${out.before.te_norm.toFixed(4)}\n` +
    `after:  RE ${out.after.re_deg.toExponential(2)} deg, TE ${out.after.te_norm.toExponential(2)}, success ${out.after.success}`;
  draw($("result"), demo.render_pose(JSON.stringify(out.pose), false), w, h);
}

function sweep(demo) {
  const axis = $("axis").value;
  const curve = JSON.parse(demo.sweep(axis, Number($("steps").value), Number($("trials").value), 1.5, 1n));
  const c = $("curve"), ctx = c.getContext("2d");
  const pad = 30, W = c.width - 2 * pad, H = c.height - 2 * pad;
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, W, H);
  const x1 = pad + (W * 1.0) / 1.5;
  ctx.setLineDash([4, 4]);
  ctx.beginPath(); ctx.moveTo(x1, pad); ctx.lineTo(x1, pad + H); ctx.stroke();
  ctx.setLineDash([]);
  ctx.strokeStyle = "#06c";
  ctx.beginPath();
  curve.forEach((p, i) => {
    const x = pad + (W * p.offset_fraction) / 1.5, y = pad + H * (1 - p.success_rate);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(`success rate vs ${axis} offset (dashed: 1.0 x limit ${demo.limit(axis)})`, pad, pad - 8);
}

await init();
const demo = new Demo(2024n);
$("index").max = demo.pose_count() - 1;
updateOffsetRange(demo);
showViews(demo);
for (const id of ["index", "offset"]) $(id).addEventListener("input", () => showViews(demo));
$("axis").addEventListener("change", () => { updateOffsetRange(demo); showViews(demo); });
$("run").addEventListener("click", () => localize(demo));
$("sweep").addEventListener("click", () => sweep(demo));
