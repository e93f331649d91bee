import init, { quant_demo, mask_demo, pipeline_demo } from "./pkg/quantstream_wasm.js";

const $ = (id) => document.getElementById(id);

function showError(err) {
  const banner = $("error-banner");
  banner.textContent = String(err);
  banner.style.display = "block";
}

// ---------------------------------------------------------------- quant ---

function drawQuant() {
  const outlier = Number($("q-outlier").value);
  const blocks = Number($("q-blocks").value);
  const seed = BigInt($("q-seed").value || 0);
  $("q-outlier-val").textContent = outlier;
  $("q-blocks-val").textContent = blocks;

  const data = JSON.parse(quant_demo(seed, blocks, outlier));
  const path = $("q-path").value;
  const values = data.values;
  const recon = data[path];
  const n = values.length;

  const canvas = $("q-canvas");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);

  const maxAbs = Math.max(...values.map(Math.abs), 1e-9);
  const padL = 12, padR = 12, padT = 12, padB = 18;
  const plotW = w - padL - padR, plotH = h - padT - padB;
  const xOf = (i) => padL + (i + 0.5) * (plotW / n);
  const yOf = (v) => padT + plotH / 2 - (v / maxAbs) * (plotH / 2) * 0.95;

  // Block stripes and 4-target markers.
  const per = data.block_size;
  for (let b = 0; b < n / per; b++) {
    if (b % 2 === 1) {
      ctx.fillStyle = "rgba(255,255,255,0.03)";
      ctx.fillRect(padL + b * per * (plotW / n), padT, per * (plotW / n), plotH);
    }
    if (data.block_uses_scale4[b]) {
      ctx.fillStyle = "rgba(255,184,107,0.25)";
      ctx.fillRect(padL + b * per * (plotW / n), padT, per * (plotW / n), 6);
    }
  }
  // Zero axis.
  ctx.strokeStyle = "rgba(255,255,255,0.15)";
  ctx.beginPath();
  ctx.moveTo(padL, yOf(0));
  ctx.lineTo(w - padR, yOf(0));
  ctx.stroke();

  // Error whiskers, originals, reconstructions.
  for (let i = 0; i < n; i++) {
    const x = xOf(i);
    ctx.strokeStyle = "rgba(255,122,144,0.55)";
    ctx.beginPath();
    ctx.moveTo(x, yOf(values[i]));
    ctx.lineTo(x, yOf(recon[i]));
    ctx.stroke();
    ctx.fillStyle = "#8694a8";
    ctx.fillRect(x - 2.5, yOf(values[i]) - 2.5, 5, 5);
    ctx.fillStyle = "#5cc8ff";
    ctx.beginPath();
    ctx.arc(x, yOf(recon[i]), 2.6, 0, Math.PI * 2);
    ctx.fill();
  }

  const fmt = (v) => v.toExponential(3);
  $("q-readouts").innerHTML =
    `<span>MSE standard <b>${fmt(data.mse.standard)}</b></span>` +
    `<span>MSE scale search <b>${fmt(data.mse.search)}</b></span>` +
    `<span>MSE RHT <b>${fmt(data.mse.rht)}</b></span>` +
    `<span>blocks on 4-target <b>${(100 * data.fraction_blocks_scale4).toFixed(0)}%</b></span>` +
    `<span>global scale <b>${data.global_scale.toExponential(3)}</b></span>`;
}

// ----------------------------------------------------------------- mask ---

function drawMaskGrid(canvas, bits, ids, L) {
  const ctx = canvas.getContext("2d");
  const { width: w } = canvas;
  const strip = 14;
  const cell = (w - strip) / L;
  canvas.height = strip + cell * L;
  ctx.clearRect(0, 0, w, canvas.height);

  const idColor = (id) => (id.clean ? "#5cc8ff" : "#ff7a90");
  for (let i = 0; i < L; i++) {
    // Key strip (top) and query strip (left).
    ctx.fillStyle = idColor(ids ? ids[i] : { clean: i < L / 2 });
    ctx.fillRect(strip + i * cell, 0, Math.ceil(cell), strip - 2);
    ctx.fillStyle = idColor(ids ? ids[i] : { clean: i < L / 2 });
    ctx.fillRect(0, strip + i * cell, strip - 2, Math.ceil(cell));
  }
  for (let i = 0; i < L; i++) {
    for (let j = 0; j < L; j++) {
      ctx.fillStyle = bits[i * L + j] ? "#dde4ee" : "#171d27";
      ctx.fillRect(strip + j * cell, strip + i * cell, Math.ceil(cell) - 0.5, Math.ceil(cell) - 0.5);
    }
  }
}

function drawMask() {
  const p = Number($("m-p").value);
  const l = Number($("m-l").value);
  const chunks = Number($("m-chunks").value);
  let data;
  try {
    data = JSON.parse(mask_demo(p, l, chunks));
  } catch (e) {
    $("m-readouts").innerHTML = `<span style="color:#ff7a90">${e}</span>`;
    return;
  }
  const logicalIds = Array.from({ length: l }, (_, i) => ({ clean: i < l / 2 }));
  drawMaskGrid($("m-natural"), data.natural, data.identities, l);
  drawMaskGrid($("m-logical"), data.logical, logicalIds, l);
  $("m-readouts").innerHTML =
    `<span>tokens per chunk <b>${data.tokens_per_chunk}</b></span>` +
    `<span>visible pairs <b>${data.visible_natural}</b> (identical in both orders)</span>` +
    `<span>noisy tokens per rank <b>${l / (2 * p)}</b></span>`;
}

// ------------------------------------------------------------- pipeline ---

function drawPipeline() {
  const chunks = Number($("p-chunks").value);
  const tDit = Number($("p-tdit").value);
  const tVae = Number($("p-tvae").value);
  $("p-chunks-val").textContent = chunks;
  $("p-tdit-val").textContent = tDit.toFixed(1);
  $("p-tvae-val").textContent = tVae.toFixed(1);

  const data = JSON.parse(pipeline_demo(chunks, tDit, tVae));
  const canvas = $("p-canvas");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);

  const tMax = data.centralized.e2e;
  const padL = 86, padR = 14;
  const xOf = (t) => padL + (t / tMax) * (w - padL - padR);
  const lane = (h - 60) / 4;

  const drawSchedule = (sched, laneBase, label) => {
    ctx.fillStyle = "#8694a8";
    ctx.font = "13px system-ui";
    ctx.fillText(label, 8, laneBase + lane - 6);
    for (const row of sched.schedule) {
      ctx.fillStyle = "rgba(92,200,255,0.9)";
      ctx.fillRect(xOf(row.denoise[0]), laneBase + 4, xOf(row.denoise[1]) - xOf(row.denoise[0]) - 1, lane * 0.42);
      ctx.fillStyle = "rgba(111,227,165,0.9)";
      ctx.fillRect(xOf(row.decode[0]), laneBase + 8 + lane * 0.42, xOf(row.decode[1]) - xOf(row.decode[0]) - 1, lane * 0.42);
    }
    // End-to-end marker.
    ctx.strokeStyle = "#ffb86b";
    ctx.beginPath();
    ctx.moveTo(xOf(sched.e2e), laneBase);
    ctx.lineTo(xOf(sched.e2e), laneBase + lane);
    ctx.stroke();
  };

  drawSchedule(data.centralized, 16, "centralized");
  drawSchedule(data.streaming_async, 36 + lane, "streaming");

  // Time axis.
  ctx.strokeStyle = "rgba(255,255,255,0.2)";
  ctx.fillStyle = "#8694a8";
  ctx.beginPath();
  ctx.moveTo(padL, h - 24);
  ctx.lineTo(w - padR, h - 24);
  ctx.stroke();
  const step = tMax > 40 ? 10 : tMax > 16 ? 5 : 2;
  for (let t = 0; t <= tMax + 1e-9; t += step) {
    ctx.fillText(t.toFixed(0), xOf(t) - 4, h - 8);
  }

  const speedup = data.centralized.e2e / data.streaming_async.e2e;
  $("p-readouts").innerHTML =
    `<span>centralized e2e <b>${data.centralized.e2e.toFixed(2)} s</b> (buffers ${data.centralized.peak_buffer_chunks} chunks)</span>` +
    `<span>streaming e2e <b>${data.streaming_async.e2e.toFixed(2)} s</b> (buffers ${data.streaming_async.peak_buffer_chunks})</span>` +
    `<span>speedup <b>${speedup.toFixed(2)}×</b></span>` +
    `<span>closed form <b>${data.streaming_async.closed_form.toFixed(2)} s</b></span>`;
}

// ----------------------------------------------------------------- init ---

init()
  .then(() => {
    for (const id of ["q-outlier", "q-blocks", "q-seed", "q-path"]) {
      $(id).addEventListener("input", drawQuant);
    }
    for (const id of ["m-p", "m-l", "m-chunks"]) {
      $(id).addEventListener("input", drawMask);
    }
    for (const id of ["p-chunks", "p-tdit", "p-tvae"]) {
      $(id).addEventListener("input", drawPipeline);
    }
    drawQuant();
    drawMask();
    drawPipeline();
  })
  .catch(showError);
