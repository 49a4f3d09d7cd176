import init, { example_model, price, passage, factorize } from "./pkg/regswitch_demo.js";

const $ = (id) => document.getElementById(id);
const colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];

function show(obj) {
  $("out").classList.remove("error");
  $("out").textContent = JSON.stringify(obj, null, 2);
}

function fail(err) {
  $("out").classList.add("error");
  $("out").textContent = String(err);
}

// Draws each series of ys against xs; `dashed` series are drawn in grey.
function plot(xs, series, dashed = []) {
  const c = $("plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const all = series.concat(dashed).flat();
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(0, ...all), Math.max(...all) * 1.05];
  const px = (x) => 40 + (c.width - 60) * (x - x0) / (x1 - x0);
  const py = (y) => c.height - 30 - (c.height - 50) * (y - y0) / (y1 - y0);
  g.strokeStyle = "#999";
  g.beginPath();
  g.moveTo(40, 20); g.lineTo(40, c.height - 30); g.lineTo(c.width - 20, c.height - 30);
  g.stroke();
  g.fillStyle = "#333";
  g.fillText(x0.toFixed(2), 40, c.height - 12);
  g.fillText(x1.toFixed(2), c.width - 50, c.height - 12);
  g.fillText(y1.toFixed(3), 2, 24);
  const line = (ys, color, dash) => {
    g.strokeStyle = color;
    g.setLineDash(dash ? [4, 4] : []);
    g.beginPath();
    ys.forEach((y, i) => (i ? g.lineTo(px(xs[i]), py(y)) : g.moveTo(px(xs[i]), py(y))));
    g.stroke();
  };
  dashed.forEach((ys) => line(ys, "#888", true));
  series.forEach((ys, i) => line(ys, colors[i % colors.length], false));
  g.setLineDash([]);
}

function run(f) {
  try {
    f();
  } catch (e) {
    fail(e);
  }
}

await init();
$("model").value = example_model();

$("price").onclick = () => run(() => {
  const r = JSON.parse(price($("model").value, parseFloat($("strike").value)));
  plot(r.spots, r.values, [r.payoff]);
  show({ levels: r.levels, boundaries: r.boundaries, smooth_fit: r.smooth_fit });
});

$("passage").onclick = () => run(() => {
  const r = JSON.parse(passage($("model").value, $("levels").value, parseFloat($("b").value)));
  plot(r.x, r.values);
  show({ matching_residual: r.matching });
});

$("factorize").onclick = () => run(() => {
  const r = JSON.parse(factorize($("model").value, $("kill").value));
  show(r);
});
