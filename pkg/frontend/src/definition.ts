/** Editable definition drafts: validation, payload mapping, local presets. */

import type { DefinitionPayload } from "./api.js";

export const NORMAL_CLASS_ID = "normal";
export const DEFAULT_NORMAL_PROMPT = "normal scene with ordinary activities";

export interface DraftEntry {
  name: string;
  prompt: string;
}

/** The normal entry is pinned: always present, always last in the payload. */
export interface DefinitionDraft {
  abnormal: DraftEntry[];
  normalPrompt: string;
}

export interface DraftProblem {
  /** "abnormal.<index>.name", "abnormal.<index>.prompt", or "normalPrompt" */
  field: string;
  message: string;
}

export function emptyDraft(): DefinitionDraft {
  return {
    abnormal: [{ name: "", prompt: "" }],
    normalPrompt: DEFAULT_NORMAL_PROMPT,
  };
}

export function validateDraft(draft: DefinitionDraft): DraftProblem[] {
  const problems: DraftProblem[] = [];
  if (draft.abnormal.length === 0) {
    problems.push({ field: "abnormal", message: "at least one abnormal class is required" });
  }
  const seen = new Map<string, number>();
  draft.abnormal.forEach((entry, i) => {
    const name = entry.name.trim();
    if (!name) {
      problems.push({ field: `abnormal.${i}.name`, message: "class name must not be empty" });
    } else if (name === NORMAL_CLASS_ID) {
      problems.push({
        field: `abnormal.${i}.name`,
        message: `"${NORMAL_CLASS_ID}" is reserved for the pinned normal entry`,
      });
    } else if (seen.has(name)) {
      problems.push({ field: `abnormal.${i}.name`, message: `duplicate class name "${name}"` });
    } else {
      seen.set(name, i);
    }
    if (!entry.prompt.trim()) {
      problems.push({ field: `abnormal.${i}.prompt`, message: "prompt must not be empty" });
    }
  });
  if (!draft.normalPrompt.trim()) {
    problems.push({ field: "normalPrompt", message: "normal prompt must not be empty" });
  }
  return problems;
}

/** Mirrors the service schema exactly; only valid drafts may be submitted. */
export function draftToPayload(draft: DefinitionDraft): DefinitionPayload {
  const problems = validateDraft(draft);
  if (problems.length > 0) {
    throw new Error(`invalid draft: ${problems.map((p) => p.message).join("; ")}`);
  }
  const classes = draft.abnormal.map((e) => ({
    class_id: e.name.trim(),
    prompt_text: e.prompt.trim(),
  }));
  classes.push({ class_id: NORMAL_CLASS_ID, prompt_text: draft.normalPrompt.trim() });
  return { classes, normal_index: classes.length - 1 };
}

export function payloadToDraft(payload: DefinitionPayload): DefinitionDraft {
  const abnormal: DraftEntry[] = [];
  let normalPrompt = DEFAULT_NORMAL_PROMPT;
  payload.classes.forEach((cls, i) => {
    if (i === payload.normal_index) {
      normalPrompt = cls.prompt_text;
    } else {
      abnormal.push({ name: cls.class_id, prompt: cls.prompt_text });
    }
  });
  return { abnormal, normalPrompt };
}

// ---- named presets in local storage -----------------------------------------

const PRESET_KEY = "defvad.presets.v1";

function readPresets(storage: Storage): Record<string, DefinitionDraft> {
  const raw = storage.getItem(PRESET_KEY);
  if (!raw) return {};
  try {
    return JSON.parse(raw) as Record<string, DefinitionDraft>;
  } catch {
    return {};
  }
}

export function listPresets(storage: Storage): string[] {
  return Object.keys(readPresets(storage)).sort();
}

export function savePreset(storage: Storage, name: string, draft: DefinitionDraft): void {
  if (!name.trim()) throw new Error("preset name must not be empty");
  const presets = readPresets(storage);
  presets[name.trim()] = draft;
  storage.setItem(PRESET_KEY, JSON.stringify(presets));
}

export function loadPreset(storage: Storage, name: string): DefinitionDraft | null {
  return readPresets(storage)[name] ?? null;
}

export function deletePreset(storage: Storage, name: string): void {
  const presets = readPresets(storage);
  delete presets[name];
  storage.setItem(PRESET_KEY, JSON.stringify(presets));
}
