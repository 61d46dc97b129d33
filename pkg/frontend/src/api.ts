/** Typed client for the scoring service. The console consumes only this API. */

export interface DefinitionClassPayload {
  class_id: string;
  prompt_text: string;
}

export interface DefinitionPayload {
  classes: DefinitionClassPayload[];
  normal_index: number;
}

export interface VideoInfo {
  video_id: string;
  L: number;
  duration_s: number;
  has_frame_labels: boolean;
}

export interface ScoreResponse {
  video_id: string;
  frame_scores: number[];
  stride_frames: number;
  fps: number;
  class_ids: string[];
  pooled_similarities: number[];
  video_class_probs: number[];
  definition_echo: DefinitionPayload;
  config_hash: string;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`service error ${status}: ${detail}`);
  }
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    if (typeof body?.detail === "string") return body.detail;
    return JSON.stringify(body?.detail ?? body);
  } catch {
    return resp.statusText;
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async listVideos(): Promise<VideoInfo[]> {
    const resp = await this.fetchFn(this.url("/videos"));
    if (!resp.ok) throw new ServiceError(resp.status, await errorDetail(resp));
    return (await resp.json()) as VideoInfo[];
  }

  async score(videoId: string, definition: DefinitionPayload): Promise<ScoreResponse> {
    const resp = await this.fetchFn(this.url("/score"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ video_id: videoId, definition }),
    });
    if (!resp.ok) throw new ServiceError(resp.status, await errorDetail(resp));
    return (await resp.json()) as ScoreResponse;
  }

  /** Ground-truth step labels; null when the video has none (204). */
  async labels(videoId: string): Promise<number[] | null> {
    const resp = await this.fetchFn(this.url(`/videos/${encodeURIComponent(videoId)}/labels`));
    if (resp.status === 204) return null;
    if (!resp.ok) throw new ServiceError(resp.status, await errorDetail(resp));
    return (await resp.json()) as number[];
  }
}
