/** Side-by-side what-if comparison state with latest-wins submissions. */

import type { DefinitionPayload, ScoreResponse } from "./api.js";

export interface Submission {
  label: string;
  definition: DefinitionPayload;
  response: ScoreResponse;
}

export type SlotIndex = 0 | 1;

export class ComparisonState {
  slots: [Submission | null, Submission | null] = [null, null];
  private tokens: [number, number] = [0, 0];

  /** Mark a new in-flight request; any older one for this slot is superseded. */
  beginRequest(slot: SlotIndex): number {
    this.tokens[slot] += 1;
    return this.tokens[slot];
  }

  /** Store the result unless a newer request was issued meanwhile. */
  commit(slot: SlotIndex, token: number, submission: Submission): boolean {
    if (token !== this.tokens[slot]) return false;
    this.slots[slot] = submission;
    return true;
  }

  clear(slot: SlotIndex): void {
    this.tokens[slot] += 1;
    this.slots[slot] = null;
  }
}

export function curvesDiffer(a: ScoreResponse, b: ScoreResponse): boolean {
  if (a.frame_scores.length !== b.frame_scores.length) return true;
  return a.frame_scores.some((v, i) => v !== b.frame_scores[i]);
}

/** Rolling history of the last N submissions for quick recall. */
export class SubmissionHistory {
  private items: Submission[] = [];

  constructor(private capacity = 8) {}

  push(submission: Submission): void {
    this.items.unshift(submission);
    if (this.items.length > this.capacity) this.items.pop();
  }

  list(): readonly Submission[] {
    return this.items;
  }
}
