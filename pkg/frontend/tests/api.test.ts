import { describe, expect, it } from "vitest";

import {
  ApiClient,
  ApiRequestError,
  AuthExpiredError,
  ConflictError,
  type FetchFn,
} from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function clientWith(handler: (input: string, init?: RequestInit) => Response) {
  const calls: { input: string; init?: RequestInit }[] = [];
  const fetchFn: FetchFn = async (input, init) => {
    calls.push({ input, init });
    return handler(input, init);
  };
  return { client: new ApiClient("", fetchFn), calls };
}

describe("ApiClient", () => {
  it("attaches the bearer token once set", async () => {
    const { client, calls } = clientWith(() => jsonResponse(200, { turns: [] }));
    client.setToken("tok-123");
    await client.chatTurns("s1", 0);
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBe("Bearer tok-123");
    expect(calls[0].input).toBe("/sessions/s1/messages?after_seq=0");
  });

  it("maps 401 to AuthExpiredError", async () => {
    const { client } = clientWith(() => jsonResponse(401, { detail: "expired" }));
    await expect(client.sessionSnapshot("s1")).rejects.toBeInstanceOf(AuthExpiredError);
  });

  it("maps 409 to ConflictError with the engine detail", async () => {
    const { client } = clientWith(() =>
      jsonResponse(409, { error: "InvalidState", detail: "not allowed in exercise_active" }),
    );
    const error = await client.postMessage("s1", "hi").catch((e) => e);
    expect(error).toBeInstanceOf(ConflictError);
    expect((error as ConflictError).message).toContain("exercise_active");
  });

  it("maps other failures to ApiRequestError with status", async () => {
    const { client } = clientWith(() => jsonResponse(404, { detail: "nope" }));
    const error = await client.feedback("run-x").catch((e) => e);
    expect(error).toBeInstanceOf(ApiRequestError);
    expect((error as ApiRequestError).status).toBe(404);
  });

  it("posts exercise starts with the documented body", async () => {
    const { client, calls } = clientWith(() =>
      jsonResponse(200, {
        run_id: "r1",
        exercise_id: "ex-1",
        unit_id: "u1",
        channel: "telephone",
        state: "exercise_active",
        opening: { seq: 1, speaker: "persona", channel: "telephone", text: "!", timestamp: 0, meta: {} },
        thread_id: "",
        call_id: "c1",
      }),
    );
    const run = await client.startExercise("s1", "ex-1");
    expect(run.run_id).toBe("r1");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({ exercise_id: "ex-1" });
  });
});
