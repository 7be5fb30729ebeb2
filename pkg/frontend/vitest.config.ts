import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 30_000,
    // the contract suite boots the conduct service in beforeAll
    hookTimeout: 120_000,
  },
});
