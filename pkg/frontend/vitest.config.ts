import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    testTimeout: 240_000, // the e2e test trains a small checkpoint first
    hookTimeout: 240_000,
  },
});
