import init, { scenarioNames, fitCurve, gcvProfile, coverage } from "./pkg/scm_web.js";

const $ = (id) => document.getElementById(id);

function status(msg, isError = false) {
  $("status").textContent = msg;
  $("status").className = isError ? "err" : "";
}

function inputs() {
  return { name: $("scenario").value, n: Number($("n").value), seed: Number($("seed").value) };
}

// Draw series [{xs, ys, color, dash}] on one canvas with shared axes.
function plot(series, { logX = false, xLabel = "", yLabel = "", vlines = [] } = {}) {
  const cv = $("plot");
  const g = cv.getContext("2d");
  const W = cv.width, H = cv.height, pad = 45;
  g.clearRect(0, 0, W, H);
  const tx = (x) => (logX ? Math.log10(x) : x);
  const xs = series.flatMap((s) => s.xs.map(tx)).filter(Number.isFinite);
  const ys = series.flatMap((s) => s.ys).filter(Number.isFinite);
  if (!xs.length || !ys.length) return;
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (x0 === x1) { x0 -= 1; x1 += 1; }
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const px = (x) => pad + ((tx(x) - x0) / (x1 - x0)) * (W - 2 * pad);
  const py = (y) => H - pad - ((y - y0) / (y1 - y0)) * (H - 2 * pad);

  g.strokeStyle = "#999";
  g.setLineDash([]);
  g.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  g.fillStyle = "#333";
  g.font = "12px sans-serif";
  g.fillText(y1.toPrecision(3), 2, pad + 4);
  g.fillText(y0.toPrecision(3), 2, H - pad);
  g.fillText((logX ? "1e" : "") + x0.toPrecision(3), pad, H - pad + 16);
  g.fillText((logX ? "1e" : "") + x1.toPrecision(3), W - pad - 30, H - pad + 16);
  g.fillText(xLabel, W / 2, H - 8);
  g.fillText(yLabel, pad, pad - 8);

  g.strokeStyle = "#ccc";
  g.setLineDash([2, 4]);
  for (const v of vlines) {
    g.beginPath();
    g.moveTo(px(v), pad);
    g.lineTo(px(v), H - pad);
    g.stroke();
  }
  for (const s of series) {
    g.strokeStyle = s.color;
    g.setLineDash(s.dash || []);
    g.beginPath();
    let started = false;
    s.xs.forEach((x, i) => {
      const y = s.ys[i];
      if (!Number.isFinite(y)) { started = false; return; }
      if (started) g.lineTo(px(x), py(y));
      else { g.moveTo(px(x), py(y)); started = true; }
    });
    g.stroke();
  }
}

// Heavy calls block the page; yield once so the status line paints first.
async function run(label, f) {
  status(label + " ...");
  await new Promise((r) => setTimeout(r, 20));
  const t0 = performance.now();
  try {
    f();
    status(`${label} done in ${((performance.now() - t0) / 1000).toFixed(2)} s`);
  } catch (e) {
    status(String(e.message || e), true);
  }
}

function showFit() {
  const { name, n, seed } = inputs();
  const v = JSON.parse(fitCurve(name, n, seed));
  const t = v.curve.map((r) => r.t);
  plot(
    [
      { xs: t, ys: v.curve.map((r) => r.truth), color: "#2a2", dash: [6, 3] },
      { xs: t, ys: v.curve.map((r) => r.lower), color: "#99c" },
      { xs: t, ys: v.curve.map((r) => r.upper), color: "#99c" },
      { xs: t, ys: v.curve.map((r) => r.beta_hat), color: "#c22" },
    ],
    { xLabel: "t", yLabel: "beta(t): estimate (red), band (blue), truth (green)", vlines: v.edges.slice(1, -1) },
  );
  const eta = v.eta.map((e) => e.toFixed(4)).join(", ");
  $("out").textContent =
    `${v.scenario}, N = ${v.n}, selected lambda ${v.lambda}\n` +
    (v.eta.length ? `eta estimate ${eta} (truth ${v.eta_truth})\n` : "");
}

function showGcv() {
  const { name, n, seed } = inputs();
  const grid = $("grid").value.split(",").map(Number).filter((x) => Number.isFinite(x) && x >= 0);
  const v = JSON.parse(gcvProfile(name, n, seed, new Float64Array(grid)));
  const rows = v.gcv.filter((e) => e.lambda > 0);
  plot([{ xs: rows.map((e) => e.lambda), ys: rows.map((e) => e.gcv ?? NaN), color: "#c22" }], {
    logX: true,
    xLabel: "lambda",
    yLabel: "GCV",
  });
  $("out").textContent =
    "lambda        GCV            numerator      effective dof\n" +
    v.gcv
      .map((e) =>
        [e.lambda.toExponential(2), e.gcv == null ? "invalid" : e.gcv.toExponential(5),
         e.numerator.toExponential(5), e.effective_dof.toFixed(3)].map((s) => s.padEnd(15)).join(""),
      )
      .join("\n") +
    `\nselected ${v.lambda}`;
}

function showCoverage() {
  const { name, n, seed } = inputs();
  const reps = Number($("reps").value);
  const r = JSON.parse(coverage(name, n, seed, reps));
  const t = r.curve.times;
  plot(
    [
      { xs: t, ys: r.curve.cp, color: "#c22" },
      { xs: [t[0], t[t.length - 1]], ys: [0.95, 0.95], color: "#2a2", dash: [6, 3] },
    ],
    { xLabel: "t", yLabel: "pointwise coverage (nominal 0.95 in green)" },
  );
  const lines = r.parameters.map(
    (p) => `${p.name.padEnd(12)} bias ${p.bias.toExponential(2).padStart(10)}  ASE ${p.ase.toExponential(2)}  ` +
      `ESE ${p.ese == null ? "-" : p.ese.toExponential(2)}  CP ${p.cp.toFixed(2)}`,
  );
  $("out").textContent =
    `${r.succeeded} of ${r.reps} replicates, average pointwise CP ${r.curve.average.toFixed(3)}\n` + lines.join("\n");
}

await init();
for (const s of scenarioNames()) {
  const o = document.createElement("option");
  o.value = o.textContent = s;
  $("scenario").append(o);
}
$("fit").onclick = () => run("fitting", showFit);
$("gcv").onclick = () => run("GCV profile", showGcv);
$("mc").onclick = () => run("coverage study", showCoverage);
status("ready");
