/** DOM wiring: definition editor, score submission, comparison rendering. */

import { ApiClient, ServiceError, VideoInfo } from "./api.js";
import {
  ComparisonState,
  SlotIndex,
  Submission,
  SubmissionHistory,
  curvesDiffer,
} from "./compare.js";
import {
  DefinitionDraft,
  draftToPayload,
  emptyDraft,
  listPresets,
  loadPreset,
  payloadToDraft,
  savePreset,
  validateDraft,
} from "./definition.js";
import {
  labelSpans,
  pointsToPolyline,
  sharedTimeAxis,
  timelinePoints,
} from "./timeline.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const PLOT_W = 800;
const PLOT_H = 180;
const SLOT_COLORS = ["#2563eb", "#ea580c"];
const SLOT_NAMES = ["A", "B"];

export class ConsoleApp {
  readonly state = new ComparisonState();
  readonly history = new SubmissionHistory(8);
  private videos: VideoInfo[] = [];
  private labelCache = new Map<string, number[] | null>();

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private storage: Storage,
  ) {}

  async init(): Promise<void> {
    this.renderSkeleton();
    try {
      this.videos = await this.api.listVideos();
    } catch (err) {
      this.showServiceError(err);
      return;
    }
    const select = this.el<HTMLSelectElement>("video-select");
    select.innerHTML = "";
    for (const v of this.videos) {
      const opt = document.createElement("option");
      opt.value = v.video_id;
      opt.textContent = `${v.video_id} (${v.L} steps, ${v.duration_s.toFixed(1)}s)`;
      select.appendChild(opt);
    }
    this.setDraft(emptyDraft());
    this.refreshPresetList();
  }

  // ---- draft editing ---------------------------------------------------------

  getDraft(): DefinitionDraft {
    const rows = Array.from(this.root.querySelectorAll<HTMLElement>(".entry-row"));
    return {
      abnormal: rows.map((row) => ({
        name: row.querySelector<HTMLInputElement>(".entry-name")!.value,
        prompt: row.querySelector<HTMLInputElement>(".entry-prompt")!.value,
      })),
      normalPrompt: this.el<HTMLInputElement>("normal-prompt").value,
    };
  }

  setDraft(draft: DefinitionDraft): void {
    const holder = this.el<HTMLElement>("entries");
    holder.innerHTML = "";
    draft.abnormal.forEach((entry, i) => this.appendEntryRow(entry.name, entry.prompt, i));
    this.el<HTMLInputElement>("normal-prompt").value = draft.normalPrompt;
    this.clearProblems();
  }

  addEntry(): void {
    const count = this.root.querySelectorAll(".entry-row").length;
    this.appendEntryRow("", "", count);
  }

  private appendEntryRow(name: string, prompt: string, index: number): void {
    const holder = this.el<HTMLElement>("entries");
    const row = document.createElement("div");
    row.className = "entry-row";
    row.dataset.index = String(index);

    const nameInput = document.createElement("input");
    nameInput.className = "entry-name";
    nameInput.placeholder = "class name";
    nameInput.value = name;

    const promptInput = document.createElement("input");
    promptInput.className = "entry-prompt";
    promptInput.placeholder = "prompt text";
    promptInput.value = prompt;

    const remove = document.createElement("button");
    remove.type = "button";
    remove.className = "remove-entry";
    remove.textContent = "remove";
    remove.addEventListener("click", () => {
      row.remove();
      this.reindexRows();
    });

    row.append(nameInput, promptInput, remove);
    holder.appendChild(row);
  }

  private reindexRows(): void {
    this.root
      .querySelectorAll<HTMLElement>(".entry-row")
      .forEach((row, i) => (row.dataset.index = String(i)));
  }

  private clearProblems(): void {
    this.root.querySelectorAll(".invalid").forEach((el) => el.classList.remove("invalid"));
    this.el<HTMLElement>("draft-errors").innerHTML = "";
    this.el<HTMLElement>("service-error").textContent = "";
  }

  private showProblems(problems: { field: string; message: string }[]): void {
    const list = this.el<HTMLElement>("draft-errors");
    list.innerHTML = "";
    for (const p of problems) {
      const item = document.createElement("div");
      item.className = "problem";
      item.textContent = `${p.field}: ${p.message}`;
      list.appendChild(item);
      const match = p.field.match(/^abnormal\.(\d+)\.(name|prompt)$/);
      if (match) {
        const row = this.root.querySelector<HTMLElement>(
          `.entry-row[data-index="${match[1]}"]`,
        );
        row
          ?.querySelector<HTMLInputElement>(`.entry-${match[2]}`)
          ?.classList.add("invalid");
      } else if (p.field === "normalPrompt") {
        this.el<HTMLInputElement>("normal-prompt").classList.add("invalid");
      }
    }
  }

  private showServiceError(err: unknown): void {
    const box = this.el<HTMLElement>("service-error");
    if (err instanceof ServiceError) {
      box.textContent = `service error ${err.status}: ${err.detail}`;
    } else {
      box.textContent = String(err);
    }
  }

  // ---- scoring ---------------------------------------------------------------

  selectedVideo(): string {
    return this.el<HTMLSelectElement>("video-select").value;
  }

  async submit(slot: SlotIndex): Promise<Submission | null> {
    this.clearProblems();
    const draft = this.getDraft();
    const problems = validateDraft(draft);
    if (problems.length > 0) {
      this.showProblems(problems);
      return null; // invalid drafts are never submitted
    }
    const definition = draftToPayload(draft);
    const videoId = this.selectedVideo();
    const token = this.state.beginRequest(slot);
    try {
      const response = await this.api.score(videoId, definition);
      const submission: Submission = {
        label: `${SLOT_NAMES[slot]}: ${definition.classes
          .slice(0, -1)
          .map((c) => c.class_id)
          .join(", ")}`,
        definition,
        response,
      };
      if (!this.state.commit(slot, token, submission)) return null; // superseded
      this.history.push(submission);
      await this.renderComparison();
      this.renderHistory();
      return submission;
    } catch (err) {
      this.showServiceError(err);
      return null;
    }
  }

  clearSlot(slot: SlotIndex): void {
    this.state.clear(slot);
    void this.renderComparison();
  }

  // ---- rendering ---------------------------------------------------------------

  private async groundTruth(videoId: string): Promise<number[] | null> {
    if (!this.labelCache.has(videoId)) {
      try {
        this.labelCache.set(videoId, await this.api.labels(videoId));
      } catch {
        this.labelCache.set(videoId, null);
      }
    }
    return this.labelCache.get(videoId) ?? null;
  }

  async renderComparison(): Promise<void> {
    const svg = this.el<SVGSVGElement>("timeline");
    svg.innerHTML = "";
    const [a, b] = this.state.slots;
    const metas = [a, b]
      .filter((s): s is Submission => s !== null)
      .map((s) => ({
        count: s.response.frame_scores.length,
        strideFrames: s.response.stride_frames,
        fps: s.response.fps,
      }));
    if (metas.length === 0) {
      this.renderPanes();
      return;
    }
    const tMax = metas.length === 2 ? sharedTimeAxis(metas[0], metas[1]) : sharedTimeAxis(metas[0]);

    const overlay = this.el<HTMLInputElement>("overlay-gt").checked;
    const first = (a ?? b)!;
    if (overlay) {
      const labels = await this.groundTruth(first.response.video_id);
      if (labels) {
        for (const span of labelSpans(labels, first.response.stride_frames, first.response.fps)) {
          const rect = document.createElementNS(SVG_NS, "rect");
          rect.setAttribute("x", String((span.start / tMax) * PLOT_W));
          rect.setAttribute("width", String(((span.end - span.start) / tMax) * PLOT_W));
          rect.setAttribute("y", "0");
          rect.setAttribute("height", String(PLOT_H));
          rect.setAttribute("class", "gt-span");
          svg.appendChild(rect);
        }
      }
    }

    [a, b].forEach((submission, slot) => {
      if (!submission) return;
      const points = timelinePoints(
        submission.response.frame_scores,
        submission.response.stride_frames,
        submission.response.fps,
      );
      const line = document.createElementNS(SVG_NS, "polyline");
      line.setAttribute("points", pointsToPolyline(points, PLOT_W, PLOT_H, tMax));
      line.setAttribute("fill", "none");
      line.setAttribute("stroke", SLOT_COLORS[slot]);
      line.setAttribute("stroke-width", "2");
      line.setAttribute("data-slot", SLOT_NAMES[slot]);
      // raw scores exactly as served, for inspection and tests
      line.setAttribute("data-scores", JSON.stringify(submission.response.frame_scores));
      svg.appendChild(line);
    });
    this.renderPanes();
  }

  private renderPanes(): void {
    this.state.slots.forEach((submission, slot) => {
      const pane = this.el<HTMLElement>(`pane-${SLOT_NAMES[slot].toLowerCase()}`);
      pane.innerHTML = "";
      const title = document.createElement("h3");
      title.textContent = submission ? submission.label : `pane ${SLOT_NAMES[slot]} (empty)`;
      title.style.color = SLOT_COLORS[slot];
      pane.appendChild(title);
      if (!submission) return;
      pane.dataset.probs = JSON.stringify(submission.response.video_class_probs);
      submission.response.class_ids.forEach((cls, i) => {
        const prob = submission.response.video_class_probs[i];
        const row = document.createElement("div");
        row.className = "prob-row";
        const label = document.createElement("span");
        label.className = "prob-label";
        label.textContent = cls;
        const bar = document.createElement("span");
        bar.className = "prob-bar";
        bar.style.width = `${prob * 100}%`;
        bar.title = String(prob);
        const value = document.createElement("span");
        value.className = "prob-value";
        value.textContent = prob.toFixed(3);
        row.append(label, bar, value);
        pane.appendChild(row);
      });
    });
    const [a, b] = this.state.slots;
    const verdict = this.el<HTMLElement>("compare-verdict");
    if (a && b) {
      verdict.textContent = curvesDiffer(a.response, b.response)
        ? "curves differ under the two definitions"
        : "curves are identical under the two definitions";
    } else {
      verdict.textContent = "";
    }
  }

  private renderHistory(): void {
    const list = this.el<HTMLElement>("history");
    list.innerHTML = "";
    for (const item of this.history.list()) {
      const li = document.createElement("li");
      const button = document.createElement("button");
      button.type = "button";
      button.textContent = `${item.response.video_id} — ${item.label}`;
      button.addEventListener("click", () => this.setDraft(payloadToDraft(item.definition)));
      li.appendChild(button);
      list.appendChild(li);
    }
  }

  // ---- presets ---------------------------------------------------------------

  refreshPresetList(): void {
    const select = this.el<HTMLSelectElement>("preset-select");
    select.innerHTML = "";
    for (const name of listPresets(this.storage)) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      select.appendChild(opt);
    }
  }

  savePresetFromEditor(): void {
    const name = this.el<HTMLInputElement>("preset-name").value;
    try {
      savePreset(this.storage, name, this.getDraft());
    } catch (err) {
      this.showServiceError(err);
      return;
    }
    this.refreshPresetList();
    this.el<HTMLSelectElement>("preset-select").value = name.trim();
  }

  loadSelectedPreset(): void {
    const name = this.el<HTMLSelectElement>("preset-select").value;
    const draft = loadPreset(this.storage, name);
    if (draft) this.setDraft(draft);
  }

  // ---- skeleton ----------------------------------------------------------------

  private el<T extends Element>(id: string): T {
    const found = this.root.querySelector(`#${id}`);
    if (!found) throw new Error(`missing element #${id}`);
    return found as T;
  }

  private renderSkeleton(): void {
    this.root.innerHTML = `
      <header><h1>definition console</h1></header>
      <section class="controls">
        <label>video <select id="video-select"></select></label>
        <label><input type="checkbox" id="overlay-gt"> ground-truth overlay</label>
      </section>
      <section class="editor">
        <h2>anomaly definition</h2>
        <div id="entries"></div>
        <button id="add-entry" type="button">add class</button>
        <div class="normal-row">
          <span class="pin">normal (pinned)</span>
          <input id="normal-prompt">
        </div>
        <div id="draft-errors"></div>
        <div class="presets">
          <input id="preset-name" placeholder="preset name">
          <button id="save-preset" type="button">save preset</button>
          <select id="preset-select"></select>
          <button id="load-preset" type="button">load preset</button>
        </div>
        <div class="score-buttons">
          <button id="score-a" type="button">score into pane A</button>
          <button id="score-b" type="button">score into pane B</button>
        </div>
      </section>
      <section class="comparison">
        <svg id="timeline" viewBox="0 0 ${PLOT_W} ${PLOT_H}" width="${PLOT_W}" height="${PLOT_H}"></svg>
        <div id="compare-verdict"></div>
        <div class="panes">
          <div id="pane-a" class="pane"></div>
          <div id="pane-b" class="pane"></div>
        </div>
      </section>
      <section class="history-box">
        <h2>history</h2>
        <ul id="history"></ul>
      </section>
      <div id="service-error"></div>
    `;
    this.el<HTMLButtonElement>("add-entry").addEventListener("click", () => this.addEntry());
    this.el<HTMLButtonElement>("score-a").addEventListener("click", () => void this.submit(0));
    this.el<HTMLButtonElement>("score-b").addEventListener("click", () => void this.submit(1));
    this.el<HTMLButtonElement>("save-preset").addEventListener("click", () =>
      this.savePresetFromEditor(),
    );
    this.el<HTMLButtonElement>("load-preset").addEventListener("click", () =>
      this.loadSelectedPreset(),
    );
    this.el<HTMLSelectElement>("video-select").addEventListener("change", () => {
      this.state.clear(0);
      this.state.clear(1);
      void this.renderComparison();
    });
    this.el<HTMLInputElement>("overlay-gt").addEventListener("change", () =>
      void this.renderComparison(),
    );
  }
}
