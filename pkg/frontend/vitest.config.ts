import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'happy-dom',
    include: ['tests/**/*.test.ts'],
    // the live smoke test trains a real model between polls
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
